//! Command-line driver for the signbridge pipeline. Every stage reads its
//! inputs from and writes its outputs to a fixed layout under the output
//! directory, and records a manifest of what it consumed and produced.

pub mod args;
pub mod artifacts;
pub mod config;
pub mod stages;

use std::fmt;

pub use args::run;
pub use config::PipelineConfig;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    /// Reclassifies a failure while reading artifacts: anything short of a
    /// numerical failure is bad data, not bad configuration.
    pub fn as_data(self) -> Self {
        if self.code == EXIT_NUMERIC {
            self
        } else {
            CliError { code: EXIT_DATA, ..self }
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<signbridge::Error> for CliError {
    fn from(e: signbridge::Error) -> Self {
        let code = match e {
            signbridge::Error::NonFinite { .. } => EXIT_NUMERIC,
            signbridge::Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
