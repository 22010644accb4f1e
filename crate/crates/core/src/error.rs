use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A size, rate or hyperparameter is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call violated an operation's preconditions (shape mismatch, bad class index, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value appeared in a forward pass.
    #[error("numeric error: non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    /// A learned update rule or loss diverged.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Scene or corpus construction failed.
    #[error("generation error: {0}")]
    Generation(String),

    /// The same keyword utterance was assigned to more than one scene.
    #[error("fold leakage: {0}")]
    FoldLeakage(String),
}

impl Error {
    /// Prefixes numeric failures with the stream they happened in.
    pub fn in_stream(self, stream: &str) -> Self {
        match self {
            Error::Numeric(msg) => Error::Numeric(alloc::format!("stream {stream}: {msg}")),
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! usage {
    ($($arg:tt)*) => { $crate::error::Error::Usage(alloc::format!($($arg)*)) };
}

macro_rules! config {
    ($($arg:tt)*) => { $crate::error::Error::Config(alloc::format!($($arg)*)) };
}

pub(crate) use config;
pub(crate) use usage;
