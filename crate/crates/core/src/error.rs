use thiserror::Error;

/// Errors produced by the simulation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid tile side {0}: must be even and >= 2")]
    InvalidTile(usize),

    #[error("invalid lattice size {rows}x{cols}: {reason}")]
    InvalidSize {
        rows: usize,
        cols: usize,
        reason: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("spin value {0} is not +1 or -1")]
    InvalidSpin(f32),

    #[error("invalid inverse temperature {0}: must be finite and >= 0")]
    InvalidBeta(f64),

    #[error("halo shape mismatch: {0}")]
    HaloMismatch(String),

    #[error("unknown worker id {0} in permutation pairs")]
    UnknownWorker(usize),

    #[error("worker {0} appears more than once as a permutation destination")]
    DuplicateDestination(usize),

    #[error("invalid worker mesh: {0}")]
    InvalidMesh(String),

    #[error("enumeration of {0} spins exceeds the 20-spin cap")]
    EnumerationTooLarge(usize),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inconsistent moments: {0}")]
    InconsistentMoments(String),
}

pub type Result<T> = std::result::Result<T, Error>;
