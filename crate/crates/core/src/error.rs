use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("agent {agent} chose unavailable action {action}")]
    UnavailableAction { agent: usize, action: usize },
    #[error("environment {instance}: {source}")]
    Instance {
        instance: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    #[error("episode already finished; call reset first")]
    EpisodeOver,
    #[error("refusing to enumerate {count} joint-action sequences (cap {cap})")]
    EnumerationCap { count: u128, cap: u128 },
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim_err<T>(op: &'static str, left: &[usize], right: &[usize]) -> Result<T> {
    Err(Error::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}
