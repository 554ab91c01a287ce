//! Dense kernels, reverse-mode differentiation and gradient checking.

pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_check, GradReport};
pub use kernels::{causal_tempered_softmax, layer_norm, mlp_apply, softmax_in_place, Activation};
pub use tape::{AttentionLayout, Gradients, Segment, Tape, Var};
pub use tensor::{matmul, matmul_nt, matmul_tn, Real, Tensor};
