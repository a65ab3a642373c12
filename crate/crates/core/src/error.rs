use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors shared across the crate. Variants carry enough context to
/// diagnose the failure without a debugger: offending shapes, parameter
/// names, step indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operator inputs have incompatible shapes.
    ShapeMismatch { op: &'static str, detail: String },
    /// A precondition on an argument failed.
    InvalidArgument(String),
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss { numel: usize },
    /// A value that must be finite was NaN or infinite.
    NonFinite(String),
    /// `l2_normalize` with a zero epsilon hit a zero-norm vector.
    ZeroNorm,
    /// `log` received a non-positive input.
    NonPositiveLog,
    /// Negative-set construction yielded nothing usable for the loss.
    EmptyNegatives(String),
    /// A moment-embedding/sentence-embedding pair from different branches.
    BranchMismatch,
    /// Corpus or batch bounds violated.
    Data(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            Error::NonFinite(ctx) => write!(f, "non-finite value: {ctx}"),
            Error::ZeroNorm => write!(f, "zero-norm vector with zero epsilon"),
            Error::NonPositiveLog => write!(f, "log of a non-positive value"),
            Error::EmptyNegatives(msg) => write!(f, "empty negative sets: {msg}"),
            Error::BranchMismatch => write!(f, "moment and sentence embeddings from different branches"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
