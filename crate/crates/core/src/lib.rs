pub mod attention;
mod error;
pub mod flow;
pub mod net;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, TensorError, Var};
