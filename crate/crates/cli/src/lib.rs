//! Library side of the `plver` command: configuration, the `allocate` and
//! `simulate` pipelines and SVG reporting.

pub mod commands;
pub mod config;
pub mod report;
pub mod svg;

/// Failures the binary maps to exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or config: exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Unreadable or malformed input data, or an output that could not be
    /// written: exit code 3.
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}
