use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty audio")]
    EmptyAudio,
    #[error("mono required, got {0} channels")]
    MonoRequired(u16),
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("expected sample rate {expected} Hz, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },
    #[error("waveform of {len} samples is shorter than one frame ({frame} samples)")]
    TooShort { len: usize, frame: usize },
    #[error("undefined SNR: input has zero energy")]
    UndefinedSnr,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("empty codebook")]
    EmptyCodebook,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("zero variance: all rows identical")]
    ZeroVariance,
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error("checkpoint config hash mismatch: checkpoint has {found}, config expects {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by NaN/Inf values during training or sampling.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
