use thiserror::Error;

/// Errors raised across the library. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter point: {0}")]
    InvalidTheta(String),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid exclusion minor: {0}")]
    InvalidMinor(String),

    #[error("entry ({row}, {col}) lies inside the excluded band {band}; it depends on the unknown error covariance")]
    InBand { row: usize, col: usize, band: usize },

    #[error("minor {minor} of Omega has determinant {det:e} but must vanish for k > r_bar")]
    NonVanishingOmegaMinor { minor: String, det: f64 },

    #[error("zero polynomial has no well-defined root set")]
    ZeroPolynomial,

    #[error("unsupported variant for this operation: {0}")]
    UnsupportedVariant(String),

    #[error("not enough exclusion minors: need {needed}, found {found}")]
    InsufficientMinors { needed: usize, found: usize },

    #[error("invalid distribution spec: {0}")]
    InvalidDistribution(String),

    #[error("panel format error: {0}")]
    PanelFormat(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
