use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("particle {particle} left the finite domain at step {step} (value {value})")]
    NonFinitePosition {
        step: usize,
        particle: usize,
        value: f64,
    },

    #[error("sampling interval {delta} is not an integer multiple of the grid spacing {spacing}")]
    IncommensurateDelta { delta: f64, spacing: f64 },

    #[error("trajectory has too few samples for this operation")]
    EmptyTrajectory,

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error(
        "Hankel moment matrix is not positive definite at order {order} \
         (pivot {pivot:e}); reduce K or observe a longer trajectory"
    )]
    HankelNotPositiveDefinite { order: usize, pivot: f64 },

    #[error("moments up to order {needed} are required but only {available} are available")]
    OrderTooHigh { needed: usize, available: usize },

    #[error("polynomial degree {k} is outside the basis range 0..={max}")]
    DegreeOutOfRange { k: usize, max: usize },

    #[error("bases have different orders ({a} vs {b})")]
    MismatchedK { a: usize, b: usize },

    #[error(
        "moment system is numerically singular (pivot {pivot:e}, scale {scale:e}); \
         reduce K or observe a longer trajectory"
    )]
    SingularSystem { pivot: f64, scale: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid quadrature: {0}")]
    InvalidQuadrature(String),

    #[error("rate study failed: {0}")]
    RateStudy(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("every seed failed at grid value {grid_value}: {source}")]
    RateCellFailed {
        grid_value: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit status: 2 configuration or input, 3 simulation, 4 basis, 5 solve.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinitePosition { .. } => 3,
            Error::HankelNotPositiveDefinite { .. } => 4,
            Error::SingularSystem { .. } => 5,
            Error::RateCellFailed { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
