use std::path::PathBuf;

/// Errors produced by the car-following library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid action: {0} is not finite")]
    InvalidAction(f64),
    #[error("car-following period has {0} samples; at least 2 are required")]
    EmptyPeriod(usize),
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("clustering is degenerate: {0}")]
    ClusteringDegenerate(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("invalid observation {0}: observed value must be positive")]
    InvalidObservation(f64),
    #[error("collision state: gap {0} m is not positive")]
    Collision(f64),
    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("observed series is identically zero")]
    ZeroDenominator,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
