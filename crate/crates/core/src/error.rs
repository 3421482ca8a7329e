use alloc::string::String;

/// Violations of a value-level invariant or an operation precondition.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error("pose has a non-finite coordinate")]
    NonFinitePose,
    #[error("move_to target outside the workspace bounds")]
    OutOfWorkspace,
    #[error("wait requires a positive tick count")]
    ZeroWait,
    #[error("held object is not present in the object map")]
    UnknownHeldObject,
    #[error("attempt index {got} does not follow {expected}")]
    AttemptIndex { expected: u32, got: u32 },
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid run policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid control parameters: {0}")]
    InvalidControl(String),
}

/// Environment failures, local or remote.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("environment used before reset")]
    NotReset,
    #[error("tick limit {limit} exceeded")]
    TickLimit { limit: u64 },
    #[error("reset failed: {0}")]
    Reset(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("remote environment error: {0}")]
    Remote(String),
}
