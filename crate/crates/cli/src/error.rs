use serde::Serialize;
use thiserror::Error;

pub const ERROR_SCHEMA: &str = "error/1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {message}")]
    ConfigIo { path: String, message: String },
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Module(#[from] twistlab::Error),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
    #[error("empty record set for {0} plot data")]
    EmptyRecords(String),
}

/// Machine-readable failure written to `error.json` and stderr.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorReport {
    pub schema: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigIo { .. } | CliError::Config { .. } => "config",
            CliError::Module(_) => "module",
            CliError::Output { .. } => "io",
            CliError::EmptyRecords(_) => "empty-records",
        }
    }

    pub fn exit_code(&self) -> i32 {
        1
    }

    pub fn report(&self) -> ErrorReport {
        let path = match self {
            CliError::Config { path, .. } | CliError::ConfigIo { path, .. } | CliError::Output { path, .. } => {
                Some(path.clone())
            }
            _ => None,
        };
        ErrorReport {
            schema: ERROR_SCHEMA.into(),
            kind: self.kind().into(),
            path,
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }
}
