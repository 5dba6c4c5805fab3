use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {op}: argument {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("non-finite gradient at node {node}")]
    NanGradient { node: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("rank deficiency at step {step}, column {column}: R_ii = {value:e}")]
    RankDeficient {
        step: usize,
        column: usize,
        value: f64,
    },

    #[error("tangent vector collapsed at step {step}: norm {norm:e}")]
    Collapse { step: usize, norm: f64 },

    #[error("trajectory diverged at step {step}")]
    Divergence { step: usize },

    #[error("non-finite value at step {step}")]
    NonFinite { step: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown oracle map `{0}`")]
    UnknownMap(String),

    #[error("loss ratio denominator is zero")]
    ZeroDenominator,

    #[error("attractor synthesis did not converge: lambda_1 = {lambda_max:.4}, sum = {sum:.4}")]
    NonConvergence {
        lambda_max: f64,
        sum: f64,
        exponents: Vec<f64>,
    },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures originating in the numerics rather than I/O or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. }
                | Error::NanGradient { .. }
                | Error::RankDeficient { .. }
                | Error::Collapse { .. }
                | Error::Divergence { .. }
                | Error::NonFinite { .. }
                | Error::ZeroDenominator
                | Error::NonConvergence { .. }
        )
    }
}
