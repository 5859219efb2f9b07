use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by graph construction, QP assembly, the solvers and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("graph is not weight-balanced at node {node}: out {out_weight}, in {in_weight}")]
    NotBalanced {
        node: usize,
        out_weight: f64,
        in_weight: f64,
    },

    #[error("graph is not connected ({zero_eigenvalues} eigenvalues within tolerance of zero)")]
    Disconnected { zero_eigenvalues: usize },

    #[error("objective matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}); check {weight}")]
    NotPositiveDefinite { min_eigenvalue: f64, weight: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("iteration diverged at round {iteration}: state norm {norm:e} exceeds {threshold:e}")]
    Divergence {
        iteration: usize,
        norm: f64,
        threshold: f64,
    },

    #[error("inconsistent optimality gap {gap:e} (oracle value {f_star:e})")]
    InconsistentGap { gap: f64, f_star: f64 },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config validation error: `{field}` {rule}")]
    ConfigInvalid { field: String, rule: String },

    #[error("variant `{variant}` failed: {source}")]
    Variant {
        variant: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            rule: rule.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, looking through variant tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Variant { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
