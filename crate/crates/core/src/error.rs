use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?} lies outside the domain{}", index.map(|i| format!(" (data index {i})")).unwrap_or_default())]
    OutOfDomain {
        index: Option<usize>,
        point: Vec<f64>,
    },

    #[error("assembly failed: {0}")]
    Assembly(String),

    /// An internal identity that must hold by construction was violated.
    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error(
        "solver did not converge within {iterations} iterations (relative residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("dense system of dimension {dim} exceeds the cap of {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("inadmissible data: {0}")]
    InadmissibleData(String),

    #[error("{message} (line {line})")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::OutOfDomain { .. } => "out-of-domain",
            Error::Assembly(_) => "assembly",
            Error::Consistency(_) => "consistency",
            Error::InvalidState(_) => "invalid-state",
            Error::NoConvergence { .. } => "no-convergence",
            Error::Singular(_) => "singular",
            Error::TooLarge { .. } => "too-large",
            Error::InadmissibleData(_) => "inadmissible-data",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
