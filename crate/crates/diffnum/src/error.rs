use std::fmt;

pub type Result<T> = std::result::Result<T, DiffError>;

/// Errors emitted by tensor construction, kernels and the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffError {
    /// A kernel was handed operands whose shapes do not conform.
    ShapeMismatch {
        kernel: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A constructor or kernel argument was invalid for the stated reason.
    InvalidArgument {
        context: &'static str,
        message: String,
    },
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss { numel: usize },
    /// `backward` was called on a tensor that was never recorded on the tape.
    DetachedLoss,
}

impl fmt::Display for DiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffError::ShapeMismatch { kernel, lhs, rhs } => {
                write!(f, "{kernel}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            DiffError::InvalidArgument { context, message } => {
                write!(f, "{context}: {message}")
            }
            DiffError::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            DiffError::DetachedLoss => {
                write!(f, "backward requires a loss connected to the tape")
            }
        }
    }
}

impl std::error::Error for DiffError {}
