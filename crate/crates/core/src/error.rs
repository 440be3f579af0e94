use thiserror::Error;

/// Errors produced by the library. Non-convergence is not an error: a fit that
/// runs out of iterations is returned with `converged == false`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: t_min ({t_min}) must be < t_max ({t_max})")]
    InvalidRange { t_min: f64, t_max: f64 },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("spline design matrix has rank < {k}")]
    RankDeficient { k: usize },

    #[error("patient {patient}: two observations round to grid column {column}")]
    Collision { patient: String, column: usize },

    #[error("patient {patient}: time {time} outside grid range [{t_min}, {t_max}]")]
    OutOfRange {
        patient: String,
        time: f64,
        t_min: f64,
        t_max: f64,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("evaluation mask is empty")]
    EmptyMask,

    #[error("evaluation mask is not a subset of the observed entries")]
    MaskNotSubset,

    #[error("true treatment effect is zero; relative error undefined")]
    ZeroTrueMu,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("requested {top} components but W has rank {rank}")]
    TopExceedsRank { top: usize, rank: usize },

    #[error("no training entries")]
    EmptyTraining,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_shape(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, got })
    }
}
