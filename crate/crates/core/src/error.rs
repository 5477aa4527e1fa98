use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("propagator did not reach the requested tolerance (achieved error bound {achieved:e})")]
    NoConvergence { achieved: f64 },

    #[error("matrix dimension {dim} exceeds the dense limit of {max}")]
    SizeExceeded { dim: usize, max: usize },

    #[error("no basis states with {particles} particles on {sites} sites (n_max = {n_max})")]
    EmptySector { sites: usize, n_max: usize, particles: usize },

    #[error("sector mismatch: {0}")]
    SectorMismatch(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("operator is not unitary (deviation {deviation:e})")]
    NotUnitary { deviation: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("jump channel {channel} selected but it annihilates the state")]
    InconsistentJump { channel: usize },

    #[error("no jump channel has positive weight")]
    NoJumpPossible,

    #[error("jump-time root refinement stagnated (|norm^2 - r| = {achieved:e})")]
    RootStagnation { achieved: f64 },

    #[error("density matrix invariant violated: {0}")]
    InvariantViolation(String),

    #[error("accumulator shape mismatch: ({0}, {1}) vs ({2}, {3})")]
    ShapeMismatch(usize, usize, usize, usize),
}

pub type Result<T> = std::result::Result<T, Error>;
