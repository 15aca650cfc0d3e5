use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("frozen feature {feature} of sample {sample} deviates from its original value")]
    FrozenDeviation { sample: usize, feature: usize },

    #[error("solver diverged at outer iteration {outer}, inner iteration {inner}: {detail}")]
    Diverged {
        outer: usize,
        inner: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether the error came from a solver run rather than from input validation.
    pub fn is_solver_abort(&self) -> bool {
        matches!(self, Error::Diverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
