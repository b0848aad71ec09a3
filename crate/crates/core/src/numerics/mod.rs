//! Differentiable tensor substrate: values, reverse-mode gradients and Adam.

mod adam;
mod backward;
mod ops;
mod tensor;

pub use adam::{Adam, AdamState};
pub use tensor::{Tensor, TensorData};
