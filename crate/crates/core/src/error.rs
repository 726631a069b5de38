use std::path::PathBuf;
use thiserror::Error;

/// Error type shared across the simulator.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("mesh topology error: {0}")]
    Topology(String),

    #[error("{context}: no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        context: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }
}
