//! Bit-packed binarized neural network inference.

pub mod error;
pub mod gemm;
pub mod layers;
pub mod network;
pub mod tensor;

pub use error::{Dims, Error, Result};
