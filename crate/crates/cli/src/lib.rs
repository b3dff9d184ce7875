//! Library side of the `ff` command: configuration, data resolution, and the
//! train / eval / params / repro / fetch-data commands.

use std::fmt;
use std::path::{Path, PathBuf};

use ff_core::FfError;

pub mod config;
pub mod data;
pub mod fetch;
pub mod params;
pub mod repro;
pub mod run;

pub use config::{DatasetName, Resolved, RunConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Ff(FfError),
    Usage(String),
    /// Reading inputs or writing outputs.
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Network(String),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Ff(e) => match e {
                FfError::Config(_) | FfError::Shape(_) | FfError::Contract(_) => EXIT_CONFIG,
                FfError::Data(_) | FfError::Format(_) | FfError::Io { .. } => EXIT_DATA,
                FfError::NonFinite(_) => EXIT_NUMERIC,
            },
            CliError::Io { .. } | CliError::Network(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Ff(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Network(m) => write!(f, "download failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<FfError> for CliError {
    fn from(e: FfError) -> Self {
        CliError::Ff(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
