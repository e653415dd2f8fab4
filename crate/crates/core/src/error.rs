use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("velocity field is not solenoidal: max |div u| = {max_div:e} > {tol:e}")]
    NonSolenoidal { max_div: f64, tol: f64 },
    #[error("grid mismatch between fields")]
    GridMismatch,
    #[error("no K_f exists: {0}")]
    NoKf(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("step failed after {rejections} rejections at t = {time:e}: {reason}")]
    StepFailed {
        rejections: usize,
        time: f64,
        reason: String,
    },
    #[error("wrong regime: {0}")]
    WrongRegime(String),
    #[error("field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
