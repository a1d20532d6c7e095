use std::path::PathBuf;

/// Crate-wide error type.
///
/// `Config` covers invalid parameters and malformed configuration files;
/// everything else is a runtime failure. The CLI maps the two groups to
/// distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("frame mismatch: expected points in frame `{expected}`, got `{actual}`")]
    FrameMismatch { expected: String, actual: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {context}{}", offset.map(|o| format!(" at offset {o}")).unwrap_or_default())]
    NonFinite {
        context: String,
        offset: Option<usize>,
    },

    #[error("parse error in {path}: {message}{}", offset.map(|o| format!(" (byte offset {o})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        message: String,
        offset: Option<usize>,
    },

    #[error("training diverged at step {step}: loss {loss:.3e} exceeds {limit:.3e}")]
    Diverged { step: usize, loss: f64, limit: f64 },

    #[error("non-finite loss: {term} evaluated to {value}")]
    NonFiniteLoss { term: String, value: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration or arguments rather than
    /// runtime failure. Used by the CLI to pick the exit code.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
