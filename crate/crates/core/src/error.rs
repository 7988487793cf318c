use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum MgfaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The q×q inner matrix of a component's factored covariance could not
    /// be factorized.
    #[error("numerically singular factor system in component {component}")]
    Singular { component: usize },

    #[error("component {component} is empty (effective count {count:.3} below {threshold})")]
    EmptyComponent {
        component: usize,
        count: f64,
        threshold: f64,
    },

    /// Every component density underflowed for one observation.
    #[error("all component densities underflow for observation {row}")]
    Underflow { row: usize },

    #[error("parse error at line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<usize>,
        message: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MgfaError>;

impl MgfaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MgfaError::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, column: Option<usize>, message: impl Into<String>) -> Self {
        MgfaError::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
