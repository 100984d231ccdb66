use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("point ({x}, {y}) is not in domain")]
    NotInDomain { x: f64, y: f64 },
    #[error("min_level {min_level} is too coarse to produce any Whitney cube")]
    TooCoarse { min_level: u32 },
    #[error("unknown cube id {0}")]
    UnknownCube(usize),
    #[error("point ({x}, {y}) is too close to the boundary for level {level}; need min_level >= {required}")]
    TooCloseToBoundary {
        x: f64,
        y: f64,
        level: u32,
        required: u32,
    },
    #[error("quasihyperbolic upper bound {upper} is below the lower bound {lower}")]
    BoundViolation { upper: f64, lower: f64 },
    #[error("disconnected decomposition: {0}")]
    Disconnected(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible placement: {0}")]
    InfeasiblePlacement(String),
    #[error("index {index} out of range (have {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("isolated cell at ({i}, {j}) has no neighbour")]
    IsolatedCell { i: i64, j: i64 },
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("nonzero weighted mean: {0:e}")]
    NonzeroMean(f64),
    #[error("untransported mass fraction {0:e} exceeds tolerance")]
    LeakedMass(f64),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("side condition failed: {0}")]
    SideCondition(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("weak residual {residual:e} above tolerance {tolerance:e} for test function {name}")]
    WeakResidual {
        name: String,
        residual: f64,
        tolerance: f64,
    },
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
