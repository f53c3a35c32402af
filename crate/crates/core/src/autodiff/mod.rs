//! Tape-based reverse-mode autodiff over dense f64 tensors.

mod adam;
mod check;
pub(crate) mod fft;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use check::{central_diff, check_gradient, directional_derivative, dot, rel_err};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
