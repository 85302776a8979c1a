//! Dense `f64` tensors with define-by-run reverse-mode differentiation.

mod gradcheck;
mod nn;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_params, GradCheckReport, FD_STEP, REL_FLOOR};
pub use nn::{mlp_apply, LayerNorm, Linear, Mlp, LAYER_NORM_EPS};
pub use params::{checksum_map, Adam, Init, ParamId, ParamStore};
pub use tape::{CustomBackward, Grads, Tape, Var};
pub use tensor::Tensor;
