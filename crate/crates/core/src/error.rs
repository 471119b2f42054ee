use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("symmetric eigensolver did not converge on a {0}x{0} matrix")]
    NonConvergence(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("log-det argument is degenerate at generalized eigenvalue {index} (value {value:e})")]
    DegenerateLogArgument { index: usize, value: f64 },

    #[error("divergence evaluated to {0:e}, below the numerical floor")]
    NegativeDivergence(f64),

    #[error("linear system is numerically singular: {0}")]
    SingularSystem(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("atom {index}: {source}")]
    Atom {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{block} block failed: {source}")]
    Block {
        block: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn in_atom(self, index: usize) -> Self {
        Error::Atom {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_block(self, block: impl Into<String>) -> Self {
        Error::Block {
            block: block.into(),
            source: Box::new(self),
        }
    }

    /// True when the error originates from malformed or unusable input data
    /// rather than from a numerical breakdown.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Format(_) | Error::Io(_) | Error::Json(_) | Error::InvalidParams(_) => true,
            Error::Domain(_) | Error::NotPositiveDefinite { .. } => true,
            // Inside an optimizer block a lost PD property is a numerical breakdown.
            Error::Atom { source, .. } | Error::Block { source, .. } => {
                !matches!(
                    **source,
                    Error::Domain(_) | Error::NotPositiveDefinite { .. }
                ) && source.is_data_error()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
