use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("sites {0} and {1} are not adjacent")]
    NotAdjacent(String, String),

    #[error("invalid direction code {0}")]
    InvalidDirection(i64),

    #[error("probability {0} outside its allowed range")]
    InvalidProbability(f64),

    #[error("parameter `{name}` out of range: {detail}")]
    OutOfRange { name: &'static str, detail: String },

    #[error("edge set of size {size} exceeds the exhaustive limit {limit}")]
    TooManyEdges { size: usize, limit: usize },

    #[error("enumeration budget exceeded: {estimate} nodes > limit {limit}")]
    BudgetExceeded { estimate: f64, limit: f64 },

    #[error("coordinates do not fit the packed site code ({0})")]
    CoordinateOverflow(String),

    #[error("path is not self-avoiding")]
    NotSelfAvoiding,

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("rejection sampler gave up after {attempts} attempts")]
    AttemptsExhausted { attempts: u64 },

    #[error("no start with a surviving open path found after {budget} environments")]
    NoPercolatingStart { budget: u64 },

    #[error("inconsistent selection: {0}")]
    InconsistentSelection(String),

    #[error("selection count {count} exceeds cap {cap}")]
    CapExceeded { count: String, cap: u64 },

    #[error("injection invariant violated: {0}")]
    InjectionViolation(String),

    #[error("io: {0}")]
    Io(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
