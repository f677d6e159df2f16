//! Crate-wide error type.

use thiserror::Error;

/// Unified error type for simulation, IO, and analysis operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (bad magic, bad version, framing, bad CSV).
    #[error("format error: {0}")]
    Format(String),

    /// A tag stream violated the (time, channel) ordering contract.
    #[error("order violation: {0}")]
    OrderViolation(String),

    /// A marker channel was used where a photon channel is required,
    /// or the two correlation channels coincide.
    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    /// Parameter outside its documented range, or an invalid bin grid.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A 729 nm pulse was requested on a level pair it cannot drive.
    #[error("invalid transition: {0}")]
    InvalidTransition(String),

    /// The ion reached state measurement in a level that cannot persist there.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Metrics are undefined (zero background).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A photon tag does not fall inside any recorded cycle span.
    #[error("orphan tag: {0}")]
    OrphanTag(String),

    /// The peak fit failed to converge within the iteration budget.
    #[error("fit diverged: {0}")]
    FitDiverged(String),

    /// The fit input carries no information (e.g. all-zero histogram).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Configuration file problem, with line/key diagnostics.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "{name}={value} must be positive"
        )))
    }
}

pub(crate) fn require_nonnegative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "{name}={value} must be nonnegative"
        )))
    }
}

pub(crate) fn require_probability(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("{name}={value} not in [0, 1]")))
    }
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data/IO, 4 analysis.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidParam(_)
            | Error::InvalidChannel(_)
            | Error::InvalidTransition(_) => 2,
            Error::Io(_) | Error::Format(_) | Error::OrderViolation(_) | Error::OrphanTag(_) => 3,
            Error::UndefinedMetric(_)
            | Error::FitDiverged(_)
            | Error::DegenerateInput(_)
            | Error::InvalidState(_) => 4,
        }
    }
}
