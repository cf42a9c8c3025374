use crate::dynamics::RobotState;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("field evaluation at ({x:.4}, {y:.4}) mm is singular: the point lies on a conductor")]
    SingularEvaluation { x: f64, y: f64 },

    #[error("point ({x:.4}, {y:.4}) mm is outside the lookup grid hull")]
    OutOfBounds { x: f64, y: f64 },

    #[error("invalid Zernike term n = {n}, m = {m}")]
    InvalidTerm { n: u32, m: u32 },

    #[error("term index {index} out of range for a basis of {len} terms")]
    TermIndex { index: usize, len: usize },

    #[error("degenerate least-squares fit (condition estimate {condition:.3e})")]
    DegenerateFit { condition: f64 },

    #[error("{samples} samples are not enough to fit {terms} terms")]
    InsufficientSamples { samples: usize, terms: usize },

    #[error("point ({x:.4}, {y:.4}) mm lies outside the disk of coil {coil}")]
    Coverage { coil: usize, x: f64, y: f64 },

    #[error("current vector has {got} entries but the model drives {expected} coils")]
    CurrentCount { got: usize, expected: usize },

    #[error("integration blew up; last finite state {state:?}")]
    IntegrationBlowup { state: RobotState },

    #[error("estimator fault: {0}")]
    EstimatorFault(String),

    #[error("invalid time interval {0} s")]
    InvalidInterval(f64),

    #[error("solver fault: {0}")]
    SolverFault(String),

    #[error("actuation singularity: allocation map has rank {rank} < 3")]
    ActuationSingularity { rank: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid file contents: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
