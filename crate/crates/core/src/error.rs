use alloc::string::String;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must be a 1x1 tensor, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("edge weight count {got} does not match edge count {expected}")]
    WeightCount { expected: usize, got: usize },
    #[error("feature dimension {got} does not match encoder input {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("OOD pool too small: need {needed} graphs, have {available}")]
    OodPoolTooSmall { needed: usize, available: usize },
    #[error("need more than {clusters} embeddings to fit, got {got}")]
    TooFewSamples { clusters: usize, got: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("score list is empty")]
    EmptyScores,
    #[error("contrastive batch needs at least 2 graphs, got {0}")]
    BatchTooSmall(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("scorer statistics have not been fitted")]
    NotFitted,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
