use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Usage(String),

    #[error("{path}: row {row}, column {column}: cannot parse {cell:?} as a number")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        cell: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The weighted normal matrix is singular to working precision. Usually the
    /// bandwidth is too small and every sample carries the all-ones feature vector.
    #[error("degenerate design (condition number {condition_number:.3e}); constant columns: {constant_columns:?}")]
    DegenerateDesign {
        condition_number: f64,
        constant_columns: Vec<usize>,
    },

    #[error("feature {feature}: weighted bin mass {alpha:e} is too close to 0 or 1")]
    NearDegenerateBin { feature: usize, alpha: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("quadrature did not converge (estimate {estimate:e}, error bound {error:e})")]
    NoConvergence { estimate: f64, error: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("model evaluation failed at sample {index}: {source}")]
    ModelEval {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Degenerate(_)
            | Error::DegenerateDesign { .. }
            | Error::NearDegenerateBin { .. }
            | Error::Numerical(_)
            | Error::NoConvergence { .. } => true,
            Error::ModelEval { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
