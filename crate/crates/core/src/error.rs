use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("duplicate measurement for child {child} at age {age}")]
    DuplicateMeasurement { child: String, age: f64 },

    #[error("no measurements left after exclusions")]
    EmptyDataset,

    #[error("child {0} has no measurements inside the analysis window")]
    NoInWindow(String),

    #[error("age {age} lies outside the knot boundary [{lower}, {upper}]")]
    OutsideBoundary { age: f64, lower: f64, upper: f64 },

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("invalid analysis window [{start}, {end}]")]
    InvalidWindow { start: f64, end: f64 },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model kind mismatch: expected {expected}, got {found}")]
    KindMismatch { expected: String, found: String },

    #[error("unknown child {0}")]
    UnknownChild(String),

    #[error("child {0} has no baseline measurement")]
    MissingBaseline(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
