use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: x = {x} outside [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("range error: {0}")]
    Range(String),

    #[error("one-cut violation: P({at}) = {value} <= 0")]
    OneCut { at: f64, value: f64 },

    #[error(
        "inconsistent potential: equilibrium mass {mass} differs from 1 (support is not [-2, 2])"
    )]
    InconsistentPotential { mass: f64 },

    #[error("precision exhausted at k = {k}: squared norm {norm_sq:e}; use more digits")]
    Precision { k: usize, norm_sq: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("inversion error: M-block of size {n} ({parity} n) has condition number {cond:e}")]
    Inversion {
        n: usize,
        parity: &'static str,
        cond: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("format version mismatch: found {found}, expected {expected}; migrate the file first")]
    Version { found: String, expected: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by user input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Domain { .. }
                | Error::Range(_)
                | Error::Parse(_)
                | Error::Version { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
