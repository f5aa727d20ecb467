//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by tensor ops, quantization, entropy models, coders and
/// the training pipelines.
#[derive(Debug, Error)]
pub enum SthqError {
    /// Tensor shapes incompatible for the requested op.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Invalid argument (dimension does not divide, empty input, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Backward pass requested on a non-scalar node.
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),

    /// Cross entropy H(p,q) is infinite because q_j = 0 where p_j > 0.
    #[error("infinite cross entropy: q[{0}] = 0 while p[{0}] > 0")]
    InfiniteCrossEntropy(usize),

    /// Bitstream decoding failed (corrupt header, truncated payload, ...).
    #[error("decode error: {0}")]
    Decode(String),

    /// Training diverged (non-finite loss).
    #[error("training aborted: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SthqError>;
