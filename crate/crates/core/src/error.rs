use thiserror::Error;

/// Errors produced by the codec, transport and pipeline layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("token at ({row}, {col}) is masked; conceal before synthesis")]
    MaskedToken { row: usize, col: usize },

    #[error("cannot split {tokens} tokens into {slices} slices")]
    TooFewTokens { tokens: usize, slices: usize },

    #[error("invalid context mode: {0}")]
    InvalidMode(String),

    /// Slice `slice` cannot be entropy decoded because context slice
    /// `missing` was not received. Both indices are zero based.
    #[error("slice {} is unrecoverable: context slice {} was lost", .slice + 1, .missing + 1)]
    Synchronization { slice: usize, missing: usize },

    #[error("corrupt stream: {0}")]
    CorruptStream(&'static str),

    #[error("loss model has no unique stationary distribution")]
    ReducibleChain,

    #[error("invalid loss model: {0}")]
    InvalidLossModel(String),

    #[error("bad format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
