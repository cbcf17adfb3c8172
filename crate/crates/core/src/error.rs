use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("integration diverged at t = {time} (max |u| = {max_abs})")]
    Diverged { time: f64, max_abs: f64 },

    #[error("degenerate phase: |F_1| = {0:e} is below threshold")]
    DegeneratePhase(f64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("insufficient data: have {have}, need {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian")]
    SingularJacobian,

    #[error("continuation branch lost at parameter {0}")]
    BranchLost(f64),

    #[error("pair (A, B) is not stabilizable: rank deficient at {0} eigenvalue(s)")]
    NotStabilizable(usize),

    #[error("no stabilizing riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::DegeneratePhase(_)
                | Error::NoConvergence { .. }
                | Error::SingularJacobian
                | Error::BranchLost(_)
                | Error::NotStabilizable(_)
                | Error::NoStabilizingSolution(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
