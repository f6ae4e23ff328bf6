//! Support library of the `didcc` command-line tool: configuration, CSV
//! ingestion, and report assembly around the estimation pipeline.

pub mod config;
pub mod ingest;
pub mod report;

use thiserror::Error;

/// Top-level CLI failure classes; each maps to a distinct exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("degenerate test: {0}")]
    DegenerateTest(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Ingestion(_) => 3,
            CliError::Estimation(_) => 4,
            CliError::DegenerateTest(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<didcc_core::Error> for CliError {
    fn from(e: didcc_core::Error) -> Self {
        match e {
            didcc_core::Error::Parameter(m) | didcc_core::Error::Shape(m) => CliError::Config(m),
            didcc_core::Error::DegenerateTest(m) => CliError::DegenerateTest(m),
            didcc_core::Error::Estimation(m)
            | didcc_core::Error::Selection(m)
            | didcc_core::Error::Invariant(m) => CliError::Estimation(m),
        }
    }
}
