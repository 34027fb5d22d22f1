use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("divergence at path {path}, node {node}: {value}")]
    Divergence { path: usize, node: usize, value: f64 },

    #[error("singular system on path {path}: pivot {pivot:e} below threshold")]
    Conditioning { path: usize, pivot: f64 },

    #[error("no convergence after {iterations} iterations: {detail}")]
    Convergence { iterations: usize, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures of the numerical pipeline rather than of its inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::Conditioning { .. } | Error::Convergence { .. }
        )
    }

    /// Short machine-readable tag used on the diagnostic stream.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Divergence { .. } => "divergence",
            Error::Conditioning { .. } => "conditioning",
            Error::Convergence { .. } => "convergence",
            Error::Precondition(_) => "precondition",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
