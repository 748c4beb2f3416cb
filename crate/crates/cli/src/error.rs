use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing artifact {}", .0.display())]
    Missing(PathBuf),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Generation(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Missing(_) => "missing",
            CliError::Data(_) => "data",
            CliError::Generation(_) => "generation",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Missing(_) => 2,
            CliError::Data(_) => 3,
            CliError::Generation(_) => 4,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

pub fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Output that cannot be written is a configuration problem (bad directory).
pub fn write_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}
