//! Dense linear algebra, activations, Adam, and the finite-difference
//! gradient checker used to validate every hand-derived gradient.

mod activation;
mod adam;
mod gradcheck;
mod matrix;
pub mod stats;

pub use activation::{relu, relu_derivative, sigmoid, sigmoid_derivative_from_output};
pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use matrix::{dot, DenseMatrix};
