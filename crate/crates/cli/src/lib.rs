//! Scenario files, output writers and subcommands of the `ifp-dispatch`
//! command-line tool.

pub mod commands;
pub mod output;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", match line { Some(l) => format!("scenario line {l}: {message}"), None => format!("scenario: {message}") })]
    Parse { line: Option<usize>, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ifp_dispatch::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use ifp_dispatch::Error as E;
        match self {
            CliError::Parse { .. } | CliError::Usage(_) => exit::PARSE,
            CliError::Io(_) => exit::IO,
            CliError::Core(E::Aborted { .. }) => exit::ABORT,
            CliError::Core(E::Config(_) | E::Parameter(_) | E::InvalidGraph(_) | E::InvalidCost(_)) => exit::PARSE,
            CliError::Core(_) => exit::IO,
        }
    }
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const INVALID_CERTIFICATE: i32 = 3;
    pub const PROPERTY_FAILURE: i32 = 4;
    pub const ABORT: i32 = 5;
}
