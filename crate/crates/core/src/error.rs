use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Two vectors with different layer layouts were combined.
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    /// A task or run was configured with unusable values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced a non-finite value.
    #[error("numeric error at {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Gaussian-process linear algebra failed even after jitter escalation.
    #[error("gaussian process: {0}")]
    Gp(String),
}

impl Error {
    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Prefix the context of a numeric error, leaving other variants alone.
    pub fn with_context(self, outer: impl std::fmt::Display) -> Self {
        match self {
            Error::Numeric { context, detail } => Error::Numeric {
                context: format!("{outer}: {context}"),
                detail,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
