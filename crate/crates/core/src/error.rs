use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("agent index {agent} out of range for {n_agents} agents")]
    AgentOutOfRange { agent: usize, n_agents: usize },

    #[error("sample index {index} out of range for shard of size {len}")]
    SampleOutOfRange { index: usize, len: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("AL may be nonconvex: eta = {eta} must be below 1/L = {}", 1.0 / .lipschitz)]
    NonconvexSubproblem { eta: f64, lipschitz: f64 },

    #[error("local solver diverged on agent {agent}: |x| = {norm:e}")]
    SolverDiverged { agent: usize, norm: f64 },

    #[error("operation requires {expected} loss family")]
    WrongFamily { expected: &'static str },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
