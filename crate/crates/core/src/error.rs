use thiserror::Error;

/// Errors produced by the simulation and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported QAM order {0}; expected one of 4, 16, 64, 256")]
    UnsupportedOrder(usize),

    #[error("invalid PMF: {0}")]
    InvalidPmf(String),

    #[error("PMF is not ring-symmetric")]
    NotRingSymmetric,

    #[error("all candidate probabilities are zero")]
    EmptySupport,

    #[error("invalid waveform configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("delay tap {tap} must be smaller than the block length {len}")]
    DelayOutOfRange { tap: usize, len: usize },

    #[error("effective channel matrix is rank deficient")]
    RankDeficient,

    #[error("noise variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("target power {target} outside the achievable interval ({min}, {max})")]
    InfeasiblePower { target: f64, min: f64, max: f64 },

    #[error("CFAR window of half-width {half_width} does not fit a {rows}x{cols} map")]
    WindowTooLarge {
        half_width: usize,
        rows: usize,
        cols: usize,
    },

    #[error("covariance rank {rank} is below the model order {order}")]
    RankBelowModelOrder { rank: usize, order: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Failures of a numerical routine on otherwise valid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient
                | Error::NonPositiveVariance(_)
                | Error::RankBelowModelOrder { .. }
                | Error::Numerical(_)
        )
    }

    /// Errors caused by bad parameters or inputs.
    pub fn is_input(&self) -> bool {
        !self.is_numerical() && !matches!(self, Error::Csv(_) | Error::Io(_))
    }
}
