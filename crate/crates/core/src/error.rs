use std::path::PathBuf;

use thiserror::Error;

use crate::dtc::DtcParams;
use crate::evalkit::MetricsReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("format error in field `{field}`: {reason}")]
    Format { field: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("physical domain error: {0}")]
    Domain(String),
    #[error("fit geometry error: {0}")]
    FitGeometry(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("solver did not converge after {iterations} iterations (relative step {last_step:e})")]
    Convergence {
        iterations: usize,
        last_step: f64,
        best: Box<DtcParams>,
    },
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("grid compatibility error: {0}")]
    GridCompatibility(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("correlation undefined: zero variance in {side}")]
    DegenerateCorrelation {
        side: &'static str,
        partial: Box<MetricsReport>,
    },
    #[error("no usable candidate pixel")]
    NoCandidate,
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
