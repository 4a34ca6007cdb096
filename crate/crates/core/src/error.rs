use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    /// The API was driven out of order (e.g. stepping without gradients).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr:e}): {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        lr: f64,
        detail: String,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with a human-readable location, e.g. `seed 2, fold 3`.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad configuration or input rather than a
    /// failure while running.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Dimension { .. }
                | Error::Input(_)
                | Error::Config(_)
                | Error::Format(_)
                | Error::Usage(_)
        )
    }
}
