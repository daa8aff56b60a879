use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {what} at node {node}")]
    Domain { what: String, node: usize },

    #[error(
        "R_max too small at node {node}: maximizer |q| = {q_norm:.6e} reached the search radius {r_max:.6e}"
    )]
    SearchRadius { node: usize, q_norm: f64, r_max: f64 },

    #[error("{solver} did not converge after {iterations} iterations: {detail}")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        detail: String,
        /// Residual (or contraction-factor) trace, most recent last.
        history: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;
