use thiserror::Error;

/// Errors produced anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid causal spec: {0}")]
    InvalidSpec(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("assignment is missing variable `{0}`")]
    MissingVariable(String),

    #[error("value {value} out of range for `{variable}` (cardinality {cardinality})")]
    ValueOutOfRange {
        variable: String,
        value: usize,
        cardinality: usize,
    },

    #[error("conditioning event has probability zero")]
    DegenerateEvidence,

    #[error("variable sets overlap on `{0}`")]
    OverlappingSets(String),

    #[error("joint state space of {states} exceeds the enumeration cap of {cap}")]
    EnumerationCap { states: u128, cap: u64 },

    #[error("the label variable cannot be removed or used as a feature here")]
    LabelNotAllowed,

    #[error("spec has no variable with role {0}")]
    MissingRole(&'static str),

    #[error("{source_name}:{line}: {message}")]
    Record {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("class {0} has no examples")]
    EmptyClass(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("distribution supports differ ({0} vs {1})")]
    SupportMismatch(usize, usize),

    #[error("a hard mask is required but a soft mask was supplied")]
    SoftMask,

    #[error("non-finite loss at step {step} ({phase}): {dump}")]
    NonFinite {
        step: usize,
        phase: String,
        dump: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
