use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimensionMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("matrix data has {len} entries, expected {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },

    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} outside the domain of {func}")]
    Domain { func: &'static str, value: f64 },

    #[error("non-finite preactivation at layer {layer}; weights overflow")]
    Overflow { layer: usize },

    #[error("layer index {index} out of range 1..={depth}")]
    LayerOutOfRange { index: usize, depth: usize },

    #[error("preactivation {value} at layer {layer}, unit {unit} is within {margin} of the ReLU kink; resample the input or weights")]
    KinkProximity {
        layer: usize,
        unit: usize,
        value: f64,
        margin: f64,
    },

    #[error("mask keeps no entries (threshold {threshold} is above every |w|)")]
    EmptyMask { threshold: f64 },

    #[error("{0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
