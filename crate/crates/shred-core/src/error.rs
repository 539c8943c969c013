//! Crate-wide error type.
//!
//! Shape problems always name both offending shapes, and numerical failures
//! carry enough location detail (op, epoch, sub-step) to be actionable.

use alloc::string::String;
use core::fmt;

pub type Result<T, E = CoreError> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two operands disagree where the op needs them to match.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A configuration value is out of range or inconsistent.
    InvalidConfig(String),
    /// A NaN or infinity showed up; the message says where.
    NonFinite(String),
    /// `Tape::backward` was called a second time on the same tape.
    BackwardSpent,
    /// Time series too short for the requested windowing.
    TooShort { n_time: usize, required: usize },
    /// More sensors requested than valid cells exist.
    SensorOverflow { requested: usize, available: usize },
    /// Requested decomposition rank exceeds what the matrix supports.
    RankOverflow { rank: usize, limit: usize },
    /// A parameter name was registered twice.
    DuplicateParam(String),
    /// Lookup of a parameter name that was never registered.
    UnknownParam(String),
    /// Text that should encode a known value (ODE system, enum token) does not.
    Parse(String),
    /// Training loss became non-finite.
    Diverged { epoch: usize, batch: usize },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: shape mismatch, {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            CoreError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            CoreError::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            CoreError::BackwardSpent => {
                write!(f, "backward already ran on this tape; build a fresh graph")
            }
            CoreError::TooShort { n_time, required } => write!(
                f,
                "time series has {n_time} steps but at least {required} are required"
            ),
            CoreError::SensorOverflow {
                requested,
                available,
            } => write!(
                f,
                "requested {requested} sensors but only {available} valid cells exist"
            ),
            CoreError::RankOverflow { rank, limit } => {
                write!(f, "rank {rank} exceeds limit {limit}")
            }
            CoreError::DuplicateParam(name) => write!(f, "parameter {name:?} already registered"),
            CoreError::UnknownParam(name) => write!(f, "unknown parameter {name:?}"),
            CoreError::Parse(msg) => write!(f, "parse error: {msg}"),
            CoreError::Diverged { epoch, batch } => write!(
                f,
                "training diverged: non-finite loss at epoch {epoch}, batch {batch}"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}
