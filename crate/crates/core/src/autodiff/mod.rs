//! Minimal reverse-mode differentiation engine for small dense networks.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, max_relative_error};
pub use tape::{Tape, ValueId};
pub use tensor::Tensor;
