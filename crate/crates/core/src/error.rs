use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("coefficient error: {0}")]
    Coefficient(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("conflicting Dirichlet values at node {node}: {first} vs {second}")]
    ConstraintConflict { node: usize, first: f64, second: f64 },

    #[error("linear solver failed: {reason}")]
    Solver { reason: String, residuals: Vec<f64> },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("incompatible ROM artifact: {0}")]
    Compatibility(String),

    #[error("unsupported artifact version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("relative error undefined: {0}")]
    UndefinedError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
