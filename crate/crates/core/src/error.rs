use crate::tensor::Shape;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left} vs {right}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },

    #[error("{op}: expected {expected} channels, got {got}")]
    ChannelMismatch { op: &'static str, expected: usize, got: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("{op}: non-finite value at element {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("loss must be a scalar (1x1x1x1), got {0}")]
    NonScalarLoss(Shape),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("image format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged { epoch: usize, batch: usize, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
