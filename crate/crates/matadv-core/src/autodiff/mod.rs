//! Minimal reverse-mode autodiff over dense f64 matrices.

pub mod adam;
pub mod check;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use check::{grad_check, grad_check_coords, grad_check_multi, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
