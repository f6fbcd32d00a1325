use std::fmt;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;
use subdiff::Error;

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    /// The computation could not finish (for example a nonlinear solve diverged).
    Failed(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Failed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub fn io_err(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub subdiff: &'static str,
    /// Whether rayon support is compiled in.
    pub parallel_feature: bool,
}

/// JSON summary written by every subcommand.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub passed: bool,
    pub versions: Versions,
    /// `sequential` or `parallel`, as actually run.
    pub exec: &'static str,
    pub seed: Option<u64>,
    pub parameters: Value,
    pub timings: Value,
    pub result: Value,
    /// CSV written by the command, if any.
    pub csv: Option<PathBuf>,
}

impl Summary {
    pub fn new(command: &'static str) -> Self {
        Summary {
            command,
            passed: true,
            versions: Versions { subdiff: env!("CARGO_PKG_VERSION"), parallel_feature: cfg!(feature = "parallel") },
            exec: "sequential",
            seed: None,
            parameters: Value::Null,
            timings: Value::Null,
            result: Value::Null,
            csv: None,
        }
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}
