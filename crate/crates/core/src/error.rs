use alloc::string::String;

/// Errors raised by the inference kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("negative input to {0}")]
    Negative(&'static str),
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("{name} = {value} is out of range ({range})")]
    OutOfRange {
        name: &'static str,
        value: usize,
        range: String,
    },
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sampling plan does not match: {0}")]
    PlanMismatch(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: alloc::vec::Vec<usize>,
        got: alloc::vec::Vec<usize>,
    },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
