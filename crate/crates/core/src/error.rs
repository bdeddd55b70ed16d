//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Library error. Variants are coarse by design: callers branch on kind,
/// humans read the message.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Dimension or layout disagreement between operands.
    Shape(String),
    /// A produced value was NaN or infinite; the message names the operation
    /// or training step that produced it.
    NonFinite(String),
    /// Invalid configuration or precondition violation.
    Config(String),
    /// Iterative solver failed (divergence, exhausted budget where an error
    /// is contractual, ...).
    Solver(String),
    /// Metric computation failed (degenerate covariance, ...).
    Metric(String),
    /// Checkpoint text could not be parsed.
    Parse(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Config(m) => write!(f, "invalid configuration: {m}"),
            Error::Solver(m) => write!(f, "solver failure: {m}"),
            Error::Metric(m) => write!(f, "metric failure: {m}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
