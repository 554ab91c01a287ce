//! Length-generalization laboratory for small decoder-only transformers.
//!
//! Modules, bottom-up:
//! - [`numerics`]: dense kernels and a reverse-mode tape.
//! - [`model`]: the trainable transformer with optional tempered softmax
//!   and two task heads.
//! - [`construction`]: the exact depth-2 sorting transformer and its
//!   stage verifier.
//! - [`datagen`]: seeded generators for sorting, increment and hint tasks.
//! - [`trainer`]: Adam, the warmup/cosine schedule, multitask alternation
//!   and checkpoints.
//! - [`evaluator`]: greedy-decode metrics across lengths.
//! - [`probe`]: encoder/decoder basis projections and mechanism metrics.
//! - [`cli`]: the `lglab` command line.

pub mod cli;
pub mod construction;
pub mod datagen;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod numerics;
pub mod probe;
pub mod trainer;

pub use error::{Error, Result};
