use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("wavelength {wavelength} nm outside [{min}, {max}] nm")]
    WavelengthOutOfRange { wavelength: f64, min: f64, max: f64 },

    #[error("wavelength {0} nm is not on the calibration grid")]
    OffGrid(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rank-deficient system ({context}): rank {rank} < {needed}")]
    RankDeficient {
        context: String,
        rank: usize,
        needed: usize,
    },

    #[error("ill-conditioned system ({context}): condition number {condition:e}")]
    IllConditioned { context: String, condition: f64 },

    #[error("channel s{channel} has zero standard deviation")]
    DegenerateDataset { channel: usize },

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated payload for view `{view}`: expected {expected} bytes, found {found}")]
    Truncated {
        view: String,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
