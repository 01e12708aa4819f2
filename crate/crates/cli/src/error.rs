use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hierlearn::Error),
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: hierlearn::Error },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("reports with config hash {hash} disagree on {field}: `{a}` vs `{b}`")]
    MixedConfigs { hash: String, field: &'static str, a: String, b: String },
    #[error("no report files match `{0}`")]
    NoReports(String),
    #[error("{0}")]
    InvalidArgument(String),
}

impl CliError {
    /// Stable prefix printed as `error[<code>]`.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) | CliError::InFile { source: e, .. } => e.code(),
            CliError::Io { .. } => "Io",
            CliError::MixedConfigs { .. } => "MixedConfigs",
            CliError::NoReports(_) => "NoReports",
            CliError::InvalidArgument(_) => "InvalidArgument",
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn in_file(path: &Path, source: hierlearn::Error) -> Self {
        CliError::InFile {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
