//! Differentiable layer primitives and their parameter bundles.

mod activation;
mod conv;
mod layers;
mod norm;
mod pool;

pub use activation::stable_sigmoid;
pub use conv::conv_out_extent;
pub use layers::*;
