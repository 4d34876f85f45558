use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (bad mesh parameters, unknown
    /// vertex ids, impossible bump geometry, and the like).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A space file failed validation. Each entry names one violated
    /// invariant.
    #[error("space validation failed:\n{}", .0.join("\n"))]
    SpaceValidation(Vec<String>),

    /// A test function is not admissible for the requested region form.
    #[error("inadmissible test function: {0}")]
    Inadmissible(String),

    /// The inner solve of an implicit step did not reach the requested
    /// tolerance. Carries the last iterate and its gradient norm.
    #[error("inner solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        last_iterate: Vec<f64>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn inadmissible(msg: impl Into<String>) -> Self {
        Error::Inadmissible(msg.into())
    }
}
