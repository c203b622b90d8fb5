use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}{}: expected {expected}, found {found}", at_time(*.t))]
    DimensionMismatch {
        what: String,
        t: Option<usize>,
        expected: String,
        found: String,
    },

    #[error("{what} is singular (reciprocal condition {rcond:.3e})")]
    Singular { what: String, rcond: f64 },

    #[error("{what} is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { what: String, min_eig: f64 },

    #[error("{what} is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model data unavailable at t={t}: {reason}")]
    Unavailable { t: usize, reason: String },

    #[error("preview exhausted at t={t}: no model data queued for the next step")]
    PreviewExhausted { t: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("block (t={t}, k={k}) infeasible: {source}")]
    Block {
        t: usize,
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_time(t: Option<usize>) -> String {
    t.map(|t| format!(" at t={t}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn dims(
        what: impl Into<String>,
        t: Option<usize>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            t,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn at_block(self, t: usize, k: usize) -> Self {
        match self {
            e @ Error::Block { .. } => e,
            e => Error::Block {
                t,
                k,
                source: Box::new(e),
            },
        }
    }

    /// True for errors that signal a feasibility or hypothesis failure rather
    /// than bad input or a numerical breakdown.
    pub fn is_feasibility(&self) -> bool {
        match self {
            Error::Infeasible(_) | Error::NotPositiveDefinite { .. } | Error::Singular { .. } => {
                true
            }
            Error::Block { source, .. } => source.is_feasibility(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
