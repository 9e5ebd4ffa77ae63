use std::path::PathBuf;

/// Errors raised anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("timestep {t} out of range 0..={max}")]
    Index { t: usize, max: usize },

    #[error("condition error: {0}")]
    Condition(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("step error: {0}")]
    Step(String),

    #[error("degenerate view transform (|det| = {det:e})")]
    View { det: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("unknown splat id {0}")]
    UnknownId(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Index { .. } => "index",
            Error::Condition(_) => "condition",
            Error::Ordering(_) => "ordering",
            Error::Step(_) => "step",
            Error::View { .. } => "view",
            Error::Config(_) => "config",
            Error::Shape { .. } => "shape",
            Error::UnknownId(_) => "id",
            Error::NonFinite(_) => "non-finite",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::AtIteration { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
