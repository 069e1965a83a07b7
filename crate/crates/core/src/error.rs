use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rational reaction is singular: u = {value} <= -2 at cell {cell}")]
    Singularity { cell: usize, value: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("singular KKT system on coarse block {block}: {reason}")]
    SingularKkt { block: usize, reason: String },

    #[error("nonlinear solver did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("no stable step: {0}")]
    NoStableStep(String),

    #[error("strike placement failed after {attempts} attempts")]
    StrikePlacement { attempts: usize },

    #[error("{scheme}: {source}")]
    Scheme {
        scheme: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Singularity { .. } => "singularity",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::LinearSolve(_) => "linear_solve",
            Error::SingularKkt { .. } => "singular_kkt",
            Error::NonConvergence { .. } => "non_convergence",
            Error::NoStableStep(_) => "no_stable_step",
            Error::StrikePlacement { .. } => "strike_placement",
            Error::Scheme { source, .. } => source.kind(),
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "config",
        }
    }

    pub(crate) fn in_scheme(self, scheme: &str) -> Error {
        Error::Scheme {
            scheme: scheme.to_string(),
            source: Box::new(self),
        }
    }
}
