use thiserror::Error;

/// Errors raised anywhere in the simulator stack.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dependency order violated: task {task} queried before predecessor {pred} finished")]
    DependencyOrder { task: usize, pred: usize },

    #[error("application incomplete: exit task {0} has no finish time")]
    IncompleteApplication(usize),

    #[error("task graph contains a cycle")]
    Cyclic,

    #[error("allocation contract violated: {0}")]
    Allocation(String),

    #[error("non-positive rate {0} bit/s")]
    NonPositiveRate(f64),

    #[error("server occupancy must be at least one VM")]
    ZeroOccupancy,

    #[error("knapsack instance infeasible: {groups} groups for {capacity} subchannels")]
    Infeasible { groups: usize, capacity: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite loss during training")]
    NumericalFailure,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
