use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not binary or not rectangular: {0}")]
    InvalidMatrix(String),

    #[error("result of {rows}x{cols} exceeds the size cap of {cap} entries")]
    DimensionOverflow { rows: usize, cols: usize, cap: usize },

    #[error("no {m}x{k} binary matrix has distinct nonzero columns (k > 2^m - 1)")]
    InfeasibleDims { m: usize, k: usize },

    #[error("enumerating {count} candidates exceeds the cap of {cap}")]
    EnumerationCapExceeded { count: u128, cap: u128 },

    #[error("no {m}x{m} square factor admits a combining matrix")]
    NoValidDesign { m: usize },

    #[error("square factor does not admit a combining matrix")]
    NoCombiningMatrix,

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("MUD search space of {size} candidates exceeds the cap of {cap}")]
    SearchSpaceCapExceeded { size: u128, cap: u128 },

    #[error("noiseless system has no consistent assignment")]
    NoiselessInfeasible,

    #[error("recursion {level}, super-group path {path:?}: {source}")]
    Recursion {
        level: usize,
        path: Vec<usize>,
        source: Box<Error>,
    },

    #[error("invalid SIC policy: {0}")]
    InvalidPolicy(String),

    #[error("zero channel gain at index {0}")]
    ZeroGain(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("JSON: {0}")]
    Json(String),
}

impl Error {
    /// True for errors that mean the request is well formed but cannot be
    /// served at desk scale or has no solution.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::DimensionOverflow { .. }
            | Error::InfeasibleDims { .. }
            | Error::EnumerationCapExceeded { .. }
            | Error::NoValidDesign { .. }
            | Error::SearchSpaceCapExceeded { .. }
            | Error::NoiselessInfeasible => true,
            Error::Recursion { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }

    pub(crate) fn at(self, level: usize, path: Vec<usize>) -> Error {
        Error::Recursion {
            level,
            path,
            source: Box::new(self),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
