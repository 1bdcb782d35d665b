use std::path::PathBuf;

/// Errors produced anywhere in the crate.
///
/// The variants follow the failure classes the operator surface cares about:
/// configuration problems exit with status 2, everything else with status 1.
#[derive(Debug, thiserror::Error)]
pub enum MtpError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index error: {0}")]
    Index(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infinite divergence: q assigns zero mass where p is positive ({0})")]
    InfiniteDivergence(String),

    #[error("context overflow: {needed} tokens needed, context length is {context_len}")]
    ContextOverflow { needed: usize, context_len: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MtpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MtpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            MtpError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, MtpError>;
