//! Hybrid U-Net for binary image segmentation: depthwise separable
//! convolutions, densely summed blocks, attention-gated skips and attention
//! pooling, on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};
