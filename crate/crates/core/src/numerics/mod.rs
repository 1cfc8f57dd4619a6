//! Dense linear algebra, seeded randomness and a finite-difference oracle.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::{finite_diff_gradient, max_relative_error};
pub use matrix::{
    elementwise, format_f64, matmul, matmul_transpose_a, matmul_transpose_b, ElementwiseOp, Matrix,
};
pub use rng::SeededRng;
