use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate sample: all pairwise distances are zero")]
    DegenerateSample,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("degenerate Gram matrix: {0}")]
    DegenerateGram(String),

    #[error("degenerate centered Gram: no mode above the rank threshold")]
    DegenerateCenteredGram,

    #[error("requested {requested} components but the achievable rank is {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("kernel mismatch between estimates")]
    KernelMismatch,

    #[error("unsupported oracle mode: {0}")]
    UnsupportedMode(String),

    #[error("eigendecomposition did not converge ({n}x{n} matrix, Frobenius norm {norm:e})")]
    NoConvergence { n: usize, norm: f64 },
}

impl Error {
    /// True for failures of the numerical layer, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::DegenerateGram(_)
                | Error::DegenerateCenteredGram
                | Error::NoConvergence { .. }
        )
    }
}
