//! Library side of the `cwe-moe` command: run configuration and the
//! command implementations.

pub mod commands;
pub mod config;

use std::fmt;

/// Error carrying the process exit code: 1 internal, 2 usage or config.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    /// Prefixes the message with the file it concerns.
    pub fn in_file(mut self, path: &std::path::Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<cwe_moe::Error> for CliError {
    fn from(e: cwe_moe::Error) -> Self {
        use cwe_moe::Error as E;
        let code = match &e {
            E::Parse { .. }
            | E::Taxonomy(_)
            | E::UnknownCwe(_)
            | E::Ingestion(_)
            | E::Config(_)
            | E::Format(_)
            | E::Json(_) => 2,
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        CliError { code, message: e.to_string() }
    }
}
