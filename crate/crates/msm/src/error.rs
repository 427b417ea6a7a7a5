//! Error type shared by every module in the crate.

use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub enum Error {
    /// A transform size constraint was violated (e.g. non-power-of-two FFT length).
    UnsupportedSize(String),
    /// Operand dimensions do not match.
    Shape(String),
    /// Invalid configuration or parameters.
    Config(String),
    /// A numerical operation failed (singular solve, NaN loss, ...).
    Numerical(String),
    /// An operation that requires sigma > 0 received sigma == 0.
    DegenerateNoise(String),
    /// Noise-level case preconditions violated (sigma vs rho ordering).
    CaseMismatch(String),
    /// An API contract was misused (stale cache, wrong call order).
    ContractViolation(String),
    /// A referenced file is missing or unreadable.
    File { path: PathBuf, msg: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnsupportedSize(m) => write!(f, "unsupported size: {m}"),
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::Config(m) => write!(f, "invalid config: {m}"),
            Error::Numerical(m) => write!(f, "numerical failure: {m}"),
            Error::DegenerateNoise(m) => write!(f, "degenerate noise level: {m}"),
            Error::CaseMismatch(m) => write!(f, "case mismatch: {m}"),
            Error::ContractViolation(m) => write!(f, "contract violation: {m}"),
            Error::File { path, msg } => write!(f, "file error at {}: {msg}", path.display()),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub fn file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::File { path: path.into(), msg: msg.into() }
    }

    /// Process exit code used by the CLI: 2 config, 3 numeric, 4 missing file.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::File { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
