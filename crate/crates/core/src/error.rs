use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("input must have zero mean (mean = {mean:e})")]
    NonZeroMean { mean: f64 },

    #[error("unsupported interaction range R = {0}")]
    UnsupportedRange(usize),

    #[error("quadrature grid too narrow: {0}")]
    GridReach(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stability bound violated: dt = {dt:e} exceeds {limit:e}")]
    Stability { dt: f64, limit: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of a numerical procedure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_numerical(),
            e => matches!(
                e,
                Error::Numerical(_) | Error::Stability { .. } | Error::DegenerateFit(_) | Error::GridReach(_)
            ),
        }
    }

    /// Wraps the error with a location such as a ladder rung.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
