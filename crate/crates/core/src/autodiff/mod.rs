//! Dense 2-D tensors and a reverse-mode tape over them.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, max_relative_error, GradCheck};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
