use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid source model: {0}")]
    SourceModel(String),

    #[error("source covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("covariance matrix of subarray {subarray} is singular")]
    SingularCovariance { subarray: usize },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("parameters not identifiable: reciprocal condition number {rcond:e}")]
    NotIdentifiable { rcond: f64 },

    #[error("high-SNR weight of subarray {subarray} is singular (rank {rank} of {dim})")]
    SingularHighSnrWeight {
        subarray: usize,
        rank: usize,
        dim: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("covariance file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
