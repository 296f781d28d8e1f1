use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coordinate {coord} is constant within batch {batch:?} and epsilon is 0")]
    ConstantCoordinate { batch: Option<usize>, coord: usize },
    #[error("batch of size {0} is too small for batch normalization")]
    BatchTooSmall(usize),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid batch plan: {0}")]
    InvalidPlan(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("RR-full dataset would need {columns} columns, cap is {cap}")]
    CombinatorialBlowup { columns: u128, cap: usize },
    #[error("label {0} is not in {{-1, +1}}")]
    NonBinaryLabel(f64),
    #[error("operation requires d = 1, got d = {0}")]
    DimensionNotOne(usize),
    #[error("enumerating {0}! permutations is not supported")]
    TooManyPermutations(usize),
    #[error("reference matrix has zero norm")]
    ZeroReference,
    #[error("trace has {len} epochs, need at least {need}")]
    TraceTooShort { len: usize, need: usize },
    #[error("linear program infeasible")]
    LpInfeasible,
    #[error("numerically ill-conditioned: {0}")]
    NumericallyIllConditioned(String),
    #[error("dataset is not linearly separable")]
    NotSeparable,
    #[error("classes are unbalanced ({pos} positive, {neg} negative)")]
    UnbalancedClasses { pos: usize, neg: usize },
    #[error("values must contain at least two distinct entries")]
    DegenerateValues,
    #[error("d = {d} is not larger than (B-1)m = {bound}")]
    NotOverparameterized { d: usize, bound: usize },
    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
