use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] fishgame_core::Error),

    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("verification failed: suites {0:?} did not pass")]
    VerifyFailed(Vec<u32>),
}

impl CliError {
    /// 1 for anything wrong with the input, 2 for failures while computing.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) | CliError::Io { .. } | CliError::VerifyFailed(_) => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
