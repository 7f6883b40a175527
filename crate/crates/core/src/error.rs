use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller handed over buffers whose shapes do not match the contract.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at index {index} while constructing {context}")]
    NonFinite { context: &'static str, index: usize },

    /// The right-hand side is undefined at this state (e.g. zero spring length).
    #[error("singular state: {0}")]
    SingularState(String),

    #[error("singular matrix: pivot {pivot:e} at column {column} below tolerance {tolerance:e}")]
    SingularMatrix {
        column: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("rational activation singular in layer {layer} at unit {unit} (x = {x}, denominator = {denominator:e})")]
    ActivationSingularity {
        layer: usize,
        unit: usize,
        x: f64,
        denominator: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures that a rollout records as an explosion instead of
    /// propagating.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularState(_)
                | Error::SingularMatrix { .. }
                | Error::ActivationSingularity { .. }
                | Error::NonFinite { .. }
        )
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
