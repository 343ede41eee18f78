use std::io::ErrorKind;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] lstfuse::Error),
}

/// Error report written to stderr.
#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    exit_code: u8,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use lstfuse::Error as E;
        match self {
            CliError::Missing(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io { source, .. } if source.kind() == ErrorKind::NotFound => 2,
            CliError::Io { .. } => 5,
            CliError::Core(e) => match e {
                E::Io { source, .. } if source.kind() == ErrorKind::NotFound => 2,
                E::Io { .. } | E::Csv { .. } => 5,
                E::Config(_)
                | E::Argument(_)
                | E::Format { .. }
                | E::Range(_)
                | E::Bounds(_)
                | E::Dimension(_)
                | E::GridCompatibility(_) => 3,
                E::Domain(_)
                | E::FitGeometry(_)
                | E::InsufficientData(_)
                | E::Convergence { .. }
                | E::Coverage(_)
                | E::DegenerateFit(_)
                | E::DegenerateCorrelation { .. }
                | E::NoCandidate => 4,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "missing_input",
            3 => "invalid_config",
            4 => "numerical_failure",
            _ => "io",
        }
    }

    fn path(&self) -> Option<String> {
        match self {
            CliError::Missing(p) | CliError::Io { path: p, .. } => Some(p.display().to_string()),
            CliError::Core(lstfuse::Error::Io { path, .. } | lstfuse::Error::Csv { path, .. }) => {
                Some(path.display().to_string())
            }
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        let report = ErrorJson {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            path: self.path(),
        };
        serde_json::to_string(&report).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}
