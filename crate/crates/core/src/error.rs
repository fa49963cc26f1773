use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid workspace bounds: {0}")]
    InvalidBounds(String),

    #[error("empty cloud")]
    EmptyCloud,

    #[error("empty scene")]
    EmptyScene,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("part '{0}' has no selected pixels")]
    EmptyPart(String),

    #[error("invalid reference set: {0}")]
    InvalidReferences(String),

    #[error("stale tape: parameters changed since the forward pass")]
    StaleTape,

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("sampler diverged at step {0}")]
    SamplerDiverged(usize),

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),

    #[error("unreachable target: {0}")]
    Unreachable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("expert failure rate {failed}/{attempts} exceeds the 5% limit")]
    ExpertUnreliable { failed: usize, attempts: usize },

    #[error("{path}: {source}")]
    Path {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn path(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
