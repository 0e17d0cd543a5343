use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("cavity geometry has no spectral fold: {0}")]
    NoFold(String),

    #[error("populations are not normalized (sum = {sum}, min = {min})")]
    NotNormalized { sum: f64, min: f64 },

    #[error("time step {dt:e} s exceeds the stability bound {bound:.3e} s")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("atom {atom} has a non-finite coordinate at t = {time:e} s")]
    NonFinite { atom: usize, time: f64 },

    #[error("empty selection: {0}")]
    EmptySelection(&'static str),

    #[error("degenerate trace: {0}")]
    DegenerateTrace(&'static str),

    #[error("run-record archive: {0}")]
    Archive(String),

    #[error("expectations: {0}")]
    Expectations(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short name of the variant, for machine-readable reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NoFold(_) => "no_fold",
            Error::NotNormalized { .. } => "not_normalized",
            Error::UnstableStep { .. } => "unstable_step",
            Error::NonFinite { .. } => "non_finite",
            Error::EmptySelection(_) => "empty_selection",
            Error::DegenerateTrace(_) => "degenerate_trace",
            Error::Archive(_) => "archive",
            Error::Expectations(_) => "expectations",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Configuration-file error, carrying the 1-based line number when one applies.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub kind: ConfigErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigErrorKind {
    Syntax(String),
    UnknownSection(String),
    UnknownKey(String),
    DuplicateKey(String),
    MissingUnit {
        key: String,
    },
    UnitMismatch {
        key: String,
        unit: String,
        expected: &'static str,
    },
    BadValue {
        key: String,
        reason: String,
    },
    OutOfRange {
        key: String,
        reason: String,
    },
    MissingKeys(Vec<String>),
    UnknownSweepPath(String),
}

impl ConfigError {
    pub(crate) fn at(line: usize, kind: ConfigErrorKind) -> Self {
        ConfigError { line: Some(line), kind }
    }

    pub(crate) fn global(kind: ConfigErrorKind) -> Self {
        ConfigError { line: None, kind }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        use ConfigErrorKind::*;
        match &self.kind {
            Syntax(s) => write!(f, "syntax error: {s}"),
            UnknownSection(s) => write!(f, "unknown section [{s}]"),
            UnknownKey(k) => write!(f, "unknown key `{k}`"),
            DuplicateKey(k) => write!(f, "duplicate key `{k}`"),
            MissingUnit { key } => write!(f, "`{key}` needs a unit"),
            UnitMismatch { key, unit, expected } => write!(f, "`{key}`: unit `{unit}` is not a {expected}"),
            BadValue { key, reason } => write!(f, "`{key}`: {reason}"),
            OutOfRange { key, reason } => write!(f, "`{key}` out of range: {reason}"),
            MissingKeys(keys) => write!(f, "missing required keys: {}", keys.join(", ")),
            UnknownSweepPath(p) => write!(f, "sweep path `{p}` is not a numeric parameter"),
        }
    }
}
