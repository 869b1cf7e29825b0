use s2align_autodiff::AutodiffError;
use thiserror::Error;

use crate::tag::DomainId;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid graph: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("contrastive loss needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("zero vector where a direction is required")]
    ZeroVector,

    #[error("all sample weights are zero")]
    AllZeroWeights,

    #[error("negative sample weight {0}")]
    NegativeWeight(f64),

    #[error("no density model for domain {0}")]
    UnknownDomain(DomainId),

    #[error("not a probability distribution: sums to {0}")]
    NotADistribution(f64),

    #[error("empty label prompt set")]
    EmptyPromptSet,

    #[error("invalid prompt set: {0}")]
    InvalidPrompts(String),

    #[error("metric needs both positive and negative examples")]
    EmptyClass,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown task `{name}`; valid tasks: {valid}")]
    UnknownTask { name: String, valid: String },

    #[error("non-finite {component} loss at step {step}")]
    NonFiniteLoss { component: &'static str, step: usize },
}

impl CoreError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
