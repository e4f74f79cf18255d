use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("singular point: {0}")]
    Singularity(&'static str),
    #[error("threshold unreachable: p_tau = {p_tau} is not below k = {k}")]
    ThresholdUnreachable { p_tau: f64, k: f64 },
    #[error("UAVs {0} and {1} occupy the same position")]
    CoincidentPositions(usize, usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("ranges incompatible: no valid scenario after {0} attempts")]
    RangesIncompatible(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
