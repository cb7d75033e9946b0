use thiserror::Error;

/// Errors produced by the watermark codec and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: template parameters, channel specs, thresholds.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Input data that cannot be processed (non-finite values, length mismatch).
    #[error("data error: {0}")]
    Data(String),

    /// Payload of the wrong length, out-of-range chunk, malformed hex.
    #[error("payload error: {0}")]
    Payload(String),

    #[error("permutation {0:?} is not a codeword")]
    NotACodeword(Vec<usize>),

    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },

    #[error("empty request: {0}")]
    EmptyRequest(&'static str),

    /// Tail calibration could not be performed on the supplied null scores.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Malformed serialized artifact (latent file, key file, codebook file).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
