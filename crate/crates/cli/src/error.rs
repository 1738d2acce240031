use std::path::PathBuf;

/// Failures of a CLI command. All of them are input-side problems and map to
/// exit status 1; solver non-convergence is not an error here.
#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}: {message}")]
    Csv { path: PathBuf, row: usize, message: String },
    #[error("{path}: line {line}: {message}")]
    Tntp { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: eqk_core::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn core(context: impl Into<String>, source: eqk_core::Error) -> Self {
        Self::Core { context: context.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
