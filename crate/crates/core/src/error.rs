use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error at node {node}: {op} of {value}")]
    Domain {
        node: usize,
        op: &'static str,
        value: f64,
    },

    #[error("invalid operand index {index} at node {node}")]
    InvalidOperand { node: usize, index: usize },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("expected {expected} inputs, got {got}")]
    InputCount { expected: usize, got: usize },

    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { loss: f64, epoch: usize, step: usize },

    #[error("no actions")]
    NoActions,

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unsupported schema version `{0}`")]
    SchemaVersion(String),

    #[error("task {task} is not schedulable by agent {agent}")]
    Unschedulable { agent: usize, task: usize },

    #[error("scheduling deadlock after {attempts} attempts")]
    Deadlock { attempts: usize },

    #[error("unknown action id {0}")]
    UnknownAction(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("mismatched dataset fingerprints: {0} vs {1}")]
    FingerprintMismatch(String, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
