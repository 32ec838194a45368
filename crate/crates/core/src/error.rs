use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum HfmError {
    #[error("non-finite value{}", fmt_node(.node))]
    NonFinite { node: Option<usize> },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("dimension mismatch: expected {expected}-D, got {actual}-D")]
    Dimension { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("CFL violation: {0}")]
    Cfl(String),

    #[error("solver blow-up at t = {time}")]
    SolverBlowup { time: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: non-finite {what} (batch point {point})")]
    Diverged {
        epoch: usize,
        step: u64,
        point: usize,
        what: String,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HfmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HfmError::Io {
            path: path.into(),
            source,
        }
    }
}

fn fmt_node(node: &Option<usize>) -> String {
    match node {
        Some(n) => format!(" at tape node {n}"),
        None => " during evaluation".to_string(),
    }
}

pub type Result<T> = std::result::Result<T, HfmError>;
