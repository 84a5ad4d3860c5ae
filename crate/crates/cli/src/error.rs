use thiserror::Error;

/// Command failures, each mapped to a process exit code.
#[derive(Error, Debug)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<seqtraj_core::Error> for CliError {
    fn from(e: seqtraj_core::Error) -> Self {
        use seqtraj_core::Error as E;
        match e {
            E::Argument(m) | E::Parse(m) => CliError::Validation(m),
            E::Numerical(m) => CliError::Numerical(m),
            E::Io(e) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
