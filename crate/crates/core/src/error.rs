use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {id}: {reason}")]
    InvalidNode { id: i64, reason: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("node {}: missing field \"{field}\"", fmt_node(*.node))]
    MissingField { node: Option<i64>, field: &'static str },

    #[error("node {}: field \"{field}\": {reason}", fmt_node(*.node))]
    InvalidField {
        node: Option<i64>,
        field: &'static str,
        reason: String,
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_node(node: Option<i64>) -> String {
    node.map_or_else(|| "?".to_string(), |id| id.to_string())
}
