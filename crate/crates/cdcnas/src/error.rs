//! Error type shared across the crate.
//!
//! Variants map onto the CLI exit-code categories: config errors exit 1,
//! missing artifacts 2, numerical divergence 3, I/O corruption 4.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Shape or dimension mismatch in a tensor operation.
    Shape(String),
    /// Invalid configuration value or unknown config key.
    Config(String),
    /// A required input artifact (dataset, genotype, checkpoint) is absent.
    MissingArtifact(String),
    /// Numerical divergence: NaN/Inf where a finite value is required.
    Numeric(String),
    /// A file exists but its contents are malformed or truncated.
    Corrupt(String),
    Io(std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Exit code for the CLI: 1 config, 2 missing artifact, 3 divergence, 4 corruption/I-O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) | Error::Config(_) => 1,
            Error::MissingArtifact(_) => 2,
            Error::Numeric(_) => 3,
            Error::Corrupt(_) | Error::Io(_) => 4,
        }
    }

    /// One-word machine-parseable category used in CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::MissingArtifact(_) => "missing-artifact",
            Error::Numeric(_) => "numeric",
            Error::Corrupt(_) => "corrupt",
            Error::Io(_) => "io",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::MissingArtifact(m) => write!(f, "missing artifact: {m}"),
            Error::Numeric(m) => write!(f, "numerical error: {m}"),
            Error::Corrupt(m) => write!(f, "corrupt data: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
