//! The exact depth-2 sorting transformer.
//!
//! Tokens are encoded as `e_s + e′_s` over six orthonormal families
//! ([`BasisAtlas`]). Block 1 copies each input symbol, finds the minimum
//! at ⊥ and flags, per symbol, whether a row sits before or after ⊥.
//! Block 2 compares input and output occurrence counts of the current
//! symbol and points at its successor; the decoder reads
//! `⟨x, ê_a + ê′_a⟩`. All attention arithmetic stays in logit space with
//! `τ = 3 ln n`.

pub mod atlas;
pub mod build;
pub mod engine;
pub mod sparse;
pub mod verify;
pub mod wrapper;

pub use atlas::{BasisAtlas, Family, DELIM};
pub use build::{
    build_construction, doubled_layernorm_variant, ConstructionConfig, ConstructionModel, LayerNormMode,
};
pub use engine::{
    construction_forward, construction_sort, construction_sort_traced, count_occurrences, oracle_sort,
    ConstructionTrace, Runner,
};
pub use verify::{
    eps_sweep, run_suite, run_suite_on, verify_stages, write_stage_rows, EpsSweepRow, SequenceOutcome, Stage,
    StageCheck, StageReport, ToleranceConfig, STAGE_CSV_HEADER,
};
pub use wrapper::{exhaustive_sequences, random_sequences, ConstructionDecoder};
