//! Dense `f64` matrices and hand-differentiated layer primitives.

mod adam;
pub mod gradcheck;
mod matrix;
pub mod ops;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport};
pub use matrix::{dot, matmul_backward, Matrix};
