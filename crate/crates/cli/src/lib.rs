//! Command implementations behind the `point-saga` binary.

pub mod commands;
pub mod output;

use point_saga::Error;

/// Failure of a subcommand: exit code plus a one-line diagnostic.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }
}

fn variant_name(e: &Error) -> &'static str {
    match e {
        Error::EmptyComponentList => "EmptyComponentList",
        Error::InvalidConstants(_) => "InvalidConstants",
        Error::DimensionMismatch { .. } => "DimensionMismatch",
        Error::SingularSystem => "SingularSystem",
        Error::MaxInnerIterations { .. } => "MaxInnerIterations",
        Error::InvalidBatchSize { .. } => "InvalidBatchSize",
        Error::EnumerationTooLarge { .. } => "EnumerationTooLarge",
        Error::MissingProvidedGradients => "MissingProvidedGradients",
        Error::ProxFailure { .. } => "ProxFailure",
        Error::MaxIterations { .. } => "MaxIterations",
        Error::EpsNotBelowPsi0 { .. } => "EpsNotBelowPsi0",
        Error::NotStationary { .. } => "NotStationary",
        Error::InvalidSpec(_) => "InvalidSpec",
        Error::Parse { .. } => "ParseError",
        Error::EmptyFile(_) => "EmptyFile",
        Error::InconsistentDimension { .. } => "InconsistentDimension",
        Error::Io(_) => "Io",
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => EXIT_IO,
            Error::EmptyComponentList
            | Error::InvalidConstants(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidBatchSize { .. }
            | Error::MissingProvidedGradients
            | Error::EpsNotBelowPsi0 { .. }
            | Error::InvalidSpec(_)
            | Error::Parse { .. }
            | Error::EmptyFile(_)
            | Error::InconsistentDimension { .. } => EXIT_CONFIG,
            Error::SingularSystem
            | Error::MaxInnerIterations { .. }
            | Error::EnumerationTooLarge { .. }
            | Error::ProxFailure { .. }
            | Error::MaxIterations { .. }
            | Error::NotStationary { .. } => EXIT_SOLVER,
        };
        Self { code, message: format!("{}: {e}", variant_name(&e)) }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(format!("Io: {e}"))
    }
}
