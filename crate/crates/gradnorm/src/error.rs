//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by the library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A parameter was outside its valid range.
    InvalidArgument(String),
    /// A balancer operation ran before initial losses were captured.
    InitialLossesNotSet,
    /// Loss ratios are undefined (nonpositive initial loss or degenerate ratios).
    DegenerateLosses(String),
    /// Weight renormalization saw a nonpositive weight sum.
    NonPositiveWeightSum,
    /// Configuration failed to parse or validate.
    Config(String),
    /// A trace or study file could not be read or parsed.
    Trace(String),
    /// File I/O failure, with the path for context.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InitialLossesNotSet => {
                write!(f, "initial losses must be captured before balancing")
            }
            Error::DegenerateLosses(msg) => write!(f, "degenerate losses: {msg}"),
            Error::NonPositiveWeightSum => write!(f, "weight sum must be positive to renormalize"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Trace(msg) => write!(f, "trace error: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
