use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid alphabet: {0}")]
    Alphabet(String),

    #[error("noise matrix row {row} ({label}) sums to {sum}, expected 1")]
    NotStochastic { row: usize, label: String, sum: f64 },

    #[error("noise matrix entry ({row}, {col}) = {value} is outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },

    #[error("invalid noise matrix: {0}")]
    NoiseMatrix(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("distribution support mismatch: {left} vs {right} symbols")]
    SupportMismatch { left: usize, right: usize },

    #[error("not a probability distribution: {0}")]
    Distribution(String),

    #[error("absolute continuity violated at symbol {symbol}: p = {p}, q = 0")]
    AbsoluteContinuity { symbol: usize, p: f64 },

    #[error("enumeration of {requested} items exceeds budget of {budget}")]
    Budget { requested: u128, budget: u128 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
