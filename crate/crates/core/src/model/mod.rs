//! The hybrid U-Net: encoder blocks with max or attention pooling, a
//! bottleneck, and a decoder that upsamples, gates the skip features and
//! fuses them by concatenation.

mod block;
mod config;
mod unet;

pub use block::{AttentionGate, BasicBlock, BlockConfig, BlockLayer};
pub use config::{ModelConfig, PoolingKind, Variant};
pub use unet::{DecoderLevel, Downsample, EncoderLevel, ForwardTrace, HybridUNet, LayerCount};
