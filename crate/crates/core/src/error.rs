use std::path::PathBuf;

/// Errors raised by the mapping engine, simulator and dataset tooling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state index {index} out of range for {n} states")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    #[error("degenerate likelihood: total posterior mass {0:e} below floor")]
    DegenerateLikelihood(f64),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("height {height} outside [{h_min}, {h_max}]")]
    OutOfRangeHeight { height: f64, h_min: f64, h_max: f64 },

    #[error("baseline {baseline} out of range for {len} snapshots")]
    BaselineOutOfRange { baseline: usize, len: usize },

    #[error("at least {needed} snapshots required, got {got}")]
    TooFewSnapshots { needed: usize, got: usize },

    #[error("invalid spec field `{field}`: {msg}")]
    InvalidSpec { field: String, msg: String },

    #[error("missing pose: {0}")]
    MissingPose(String),

    #[error("{}:{line}: malformed row: {msg}", path.display())]
    MalformedRow { path: PathBuf, line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
