use std::fmt;
use std::path::Path;

use metagam_core::sim::SimError;
use metagam_core::{DataError, FitError, MetaError, ModelIoError};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_RANK_DEFICIENT: u8 = 3;
pub const EXIT_SCHEMA: u8 = 4;
pub const EXIT_SIMULATION: u8 = 5;

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError::new(EXIT_INPUT, message)
    }

    pub fn model_file(path: &Path, err: ModelIoError) -> Self {
        let code = match err {
            ModelIoError::Io { .. } => EXIT_INPUT,
            _ => EXIT_SCHEMA,
        };
        CliError::new(code, format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        CliError::input(err.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(err: FitError) -> Self {
        let code = match err {
            FitError::RankDeficientDesign { .. } => EXIT_RANK_DEFICIENT,
            FitError::LambdaCount { .. } => EXIT_FAILURE,
            _ => EXIT_INPUT,
        };
        CliError::new(code, err.to_string())
    }
}

impl From<MetaError> for CliError {
    fn from(err: MetaError) -> Self {
        CliError::new(EXIT_FAILURE, err.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        let code = match err {
            SimError::Fit { .. } | SimError::Meta { .. } => EXIT_SIMULATION,
            SimError::Config(_) => EXIT_INPUT,
            SimError::Io { .. } => EXIT_FAILURE,
        };
        CliError::new(code, err.to_string())
    }
}

pub fn io_error(path: &Path, err: std::io::Error) -> CliError {
    let code = if err.kind() == std::io::ErrorKind::NotFound {
        EXIT_INPUT
    } else {
        EXIT_FAILURE
    };
    CliError::new(code, format!("{}: {err}", path.display()))
}
