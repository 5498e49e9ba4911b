use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),

    #[error("parameter dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter point {0:?} is not in the parameter space")]
    PointNotInSpace(Vec<f64>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("explicit scheme unstable: dt = {dt:e} exceeds the stability limit {limit:e}")]
    Stability { dt: f64, limit: f64 },

    #[error("simulation produced a non-finite state at step {0}")]
    BlowUp(usize),

    #[error("stationary density did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("filter mass underflow at t = {0}")]
    MassUnderflow(f64),

    #[error("extracted kernel has a non-positive entry ({0:e})")]
    NonPositiveKernel(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("diffusion matrix is not invertible at x = {0:?}")]
    SingularDiffusion(Vec<f64>),

    #[error("observation record too short: {0}")]
    RecordTooShort(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("file not found: {0}")]
    FileNotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
