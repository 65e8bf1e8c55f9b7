use thiserror::Error;

/// Errors raised by the imaging toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("nonphysical scene: shape {index} has Re(eps_r) = {re} < 1")]
    NonphysicalScene { index: usize, re: f64 },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward solve did not converge in {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("pole in contrast mapping at pixel {pixel}")]
    Pole { pixel: usize },
    #[error("measured scattered field is identically zero")]
    ZeroData,
    #[error("incident field is identically zero")]
    ZeroIncident,
    #[error("non-finite {term} at iteration {iteration}")]
    NonFinite { term: String, iteration: usize },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("file was written big-endian; only little-endian payloads are supported")]
    BigEndian,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("frequency {0} GHz not present in dataset")]
    MissingFrequency(f64),
    #[error("dataset rejected: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
