use std::path::PathBuf;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("combiner for symbol {symbol} is not orthonormal (max |W^H W - I| = {deviation:e})")]
    NonOrthonormalCombiner { symbol: usize, deviation: f64 },

    #[error("rank-deficient pilot pattern at subcarrier {subcarrier}{}", symbol_suffix(.symbol))]
    RankDeficientPilots {
        subcarrier: usize,
        symbol: Option<usize>,
    },

    #[error("non-finite derivative for parameter {0}")]
    NonFiniteDerivative(String),

    #[error("unsupported array structure: {0}")]
    UnsupportedStructure(String),

    #[error("non-identifiable measurement set; missing: {}", .0.join("; "))]
    NonIdentifiable(Vec<String>),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn symbol_suffix(symbol: &Option<usize>) -> String {
    match symbol {
        Some(k) => format!(", symbol {k}"),
        None => " (pooled over symbols)".to_string(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
