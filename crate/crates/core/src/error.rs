use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged at epoch {epoch}: {reason} (last finite epoch: {})", fmt_last(*.last_finite_epoch, *.last_finite_loss))]
    Divergence {
        epoch: usize,
        last_finite_epoch: Option<usize>,
        last_finite_loss: Option<f64>,
        reason: String,
    },

    #[error("model degeneracy: {0}")]
    Degenerate(String),

    #[error("density evaluation failed: {0}")]
    Density(String),

    #[error("label dimension {dim} is too large for grid regions (max {max}); use sample mode instead")]
    Dimensionality { dim: usize, max: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("model hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("finite-difference oracle: {0}")]
    Oracle(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_last(epoch: Option<usize>, loss: Option<f64>) -> String {
    match (epoch, loss) {
        (Some(e), Some(l)) => format!("{e}, mean NLL {l:.6}"),
        _ => "none".to_string(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
