//! Reverse-mode autodiff kernel: dense tensors, an operation tape, and the
//! exact set of layers the encoder and predictor need.

mod ckpt;
mod tape;
mod tensor;

pub use ckpt::{load_tensors, save_tensors, CKPT_HEADER};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
