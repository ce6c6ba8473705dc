use thiserror::Error;

pub type Result<T, E = PmdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PmdError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error(
        "proximal solve did not converge: residual {residual:e} after {iterations} iterations"
    )]
    NonConvergence { residual: f64, iterations: usize },

    #[error("{what} exceeded iteration cap {cap} (residual {residual:e})")]
    IterationCap {
        what: &'static str,
        cap: usize,
        residual: f64,
    },

    #[error("singular linear system at pivot {0}")]
    Singular(usize),

    #[error("verification failed: {inequality} at iteration {iteration}{} (lhs {lhs:e}, rhs {rhs:e})", state.map(|s| format!(", state {s}")).unwrap_or_default())]
    Verification {
        inequality: &'static str,
        iteration: usize,
        state: Option<usize>,
        lhs: f64,
        rhs: f64,
    },

    #[error("unknown mirror map `{0}`")]
    UnknownMap(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PmdError {
    pub fn is_verification(&self) -> bool {
        matches!(self, PmdError::Verification { .. })
    }
}
