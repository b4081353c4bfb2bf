// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An observation that is not in the sample space of the family.
    #[error("invalid observation at index {index}: {message}")]
    Domain { index: usize, message: String },

    /// Hyperparameters that do not define a proper density.
    #[error("improper posterior: {0}")]
    Improper(String),

    /// A nonfinite intermediate value.
    #[error("numeric failure in {term}: {message}")]
    Numeric { term: String, message: String },

    /// Target moments that no member of the conjugate family can reproduce.
    #[error("degenerate moments: {0}")]
    DegenerateMoments(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn numeric(term: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            term: term.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            other => Error::AtStep {
                step,
                source: Box::new(other),
            },
        }
    }

    /// Strips any step annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by inputs or configuration rather than arithmetic.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Domain { .. } | Error::Config(_) | Error::Improper(_) | Error::DegenerateMoments(_)
        )
    }
}
