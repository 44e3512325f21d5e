use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The experiment or metric specification is inconsistent.
    #[error("specification error: {0}")]
    Spec(String),

    /// Malformed spec file; `key` names the offending entry.
    #[error("parse error at line {line}, key `{key}`: {message}")]
    Parse {
        line: usize,
        key: String,
        message: String,
    },

    /// GAMP produced a non-finite or nonpositive quantity.
    #[error("GAMP diverged at iteration {iteration}: {reason}")]
    Divergence {
        iteration: usize,
        reason: String,
        /// `(δ, Δ_v)` for every completed iteration.
        trace: Vec<(f64, f64)>,
    },

    /// A numerical routine failed to reach its tolerance.
    #[error("numeric failure: {message} (achieved {achieved:e})")]
    Numeric { message: String, achieved: f64 },

    /// The sigmoid mixture fit missed the sup-norm bound.
    #[error("sigmoid mixture fit error {achieved:e} exceeds tolerance {tolerance:e}")]
    MixtureFit { achieved: f64, tolerance: f64 },

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// True for failures caused by the caller's input rather than numerics.
    pub fn is_spec_error(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Spec(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
