use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("non-finite values in field `{0}`")]
    NonFinite(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error(
        "stratification lost: min(hbar + h) = {min:.6e} < floor {floor:.6e} at t = {t:.6e}"
    )]
    Stratification { min: f64, floor: f64, t: f64 },

    #[error("CFL violation: dt = {dt:.3e} exceeds limit {dt_max:.3e} (speed {speed:.3e})")]
    Cfl { dt: f64, dt_max: f64, speed: f64 },

    #[error(
        "pressure solver did not converge: {iterations} iterations, relative residual {residual:.3e}"
    )]
    SolverDiverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("invalid operation: {0}")]
    InvalidOperation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation { .. } => 2,
            Error::Stratification { .. } => 3,
            Error::SolverDiverged { .. } => 4,
            Error::Cfl { .. } => 5,
            _ => 1,
        }
    }
}
