use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("mesh parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("zero pivot at row {row}")]
    Singular { row: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("config validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("parameter regime not covered by the stability analysis: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
