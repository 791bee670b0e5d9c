//! Dense `f64` kernels with explicit adjoints, parameters, seeded RNG and a
//! finite-difference gradient checker.

mod gradcheck;
pub mod kernels;
pub mod macs;
mod matrix;
mod param;
mod rng;

pub use gradcheck::{check_gradients, GradCheckReport, DEFAULT_STEP};
pub use kernels::{
    cross_entropy_backward, cross_entropy_logits, gelu, gelu_backward, gelu_map, layer_norm_backward,
    layer_norm_rows, layer_norm_rows_cached, linear, matmul, matmul_backward, matmul_nt, matmul_tn,
    softmax_rows, softmax_rows_backward, weighted_row_sum, LayerNormCache, LN_EPS,
};
pub use matrix::Matrix;
pub use param::{ParamSet, Parameter};
pub use rng::RngState;
