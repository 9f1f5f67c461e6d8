//! FourCropNet: a residual convolutional network with squeeze-and-excitation
//! attention for multi-crop leaf disease classification, implemented on a
//! small hand-written tensor engine.

pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
