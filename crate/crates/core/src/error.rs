use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("failed to converge: {0}")]
    Convergence(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("outcome {index}: {source}")]
    Outcome {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pair ({j}, {k}): {source}")]
    Pair {
        j: usize,
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sampler iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn for_outcome(self, index: usize) -> Self {
        Error::Outcome {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn for_pair(self, j: usize, k: usize) -> Self {
        Error::Pair {
            j,
            k,
            source: Box::new(self),
        }
    }
}
