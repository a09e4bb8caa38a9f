use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("window/hop pair does not satisfy constant overlap-add")]
    NotCola,
    #[error("zero-energy clip")]
    ZeroEnergy,
    #[error("all-zero impulse response")]
    ZeroRir,
    #[error("degenerate decay ramp: t0 = t1 = {0}")]
    DegenerateDecay(usize),
    #[error("spectrogram is already log1p compressed")]
    AlreadyCompressed,
    #[error("spectrogram is not log1p compressed")]
    NotCompressed,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("corpus '{0}' is empty")]
    EmptyCorpus(String),
    #[error("corpus entry '{id}': {reason}")]
    CorpusEntry { id: String, reason: String },
    #[error("manifest errors:\n  {}", .0.join("\n  "))]
    Manifest(Vec<String>),
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
