use thiserror::Error;

/// Errors raised across the simulation and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid unfolding mode {0} (expected 1, 2 or 3)")]
    InvalidMode(u8),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("requested rank {requested} exceeds the available {available}")]
    RankTooLarge { requested: usize, available: usize },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("invalid hardware model: {0}")]
    InvalidModel(String),

    #[error("PA order {0} is outside the range of the alpha recursion (L <= 3)")]
    UnsupportedOrder(usize),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("degenerate profile: normalization entry of device {device} is zero")]
    DegenerateProfile { device: usize },

    #[error("Fisher matrix is singular (smallest eigenvalue {min_eigenvalue:e})")]
    Identifiability {
        min_eigenvalue: f64,
        null_direction: Vec<f64>,
    },

    #[error("CRLB routes disagree: relative deviation {0:e}")]
    RouteMismatch(f64),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
