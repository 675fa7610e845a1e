use thiserror::Error;

use crate::fingerprint::Protocol;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("canonical grammar error at byte {offset}")]
    Grammar { offset: usize },
    #[error("tcp fingerprint requires a ttl")]
    MissingTtl,
    #[error("fingerprint has no elements")]
    Empty,
    #[error("tls cipher boundary exceeds element count")]
    BadCipherBoundary,
    #[error("{protocol} code {code} does not carry data")]
    UnexpectedData { protocol: Protocol, code: u32 },
    #[error("http fingerprint must be a single (0, user-agent) element")]
    BadHttpShape,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("count store is empty")]
    EmptyStore,
    #[error("inconsistent marginals: {0}")]
    Inconsistent(String),
    #[error("bad store document: {0}")]
    BadDocument(String),
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("no training data for protocol {0}")]
    NoTrainingData(Protocol),
    #[error("fingerprint protocol {got} does not match model protocol {expected}")]
    ProtocolMismatch { expected: Protocol, got: Protocol },
}

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("no training windows")]
    EmptyTraining,
    #[error("label {0:?} is not covered by the taxonomy")]
    UnmappedLabel(String),
}

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("feature matrix has {rows} rows but {labels} labels")]
    ShapeMismatch { rows: usize, labels: usize },
    #[error("feature vector length {got}, model expects {expected}")]
    VectorLength { expected: usize, got: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("{rows} rows cannot fill {folds} cross-validation folds")]
    TooFewRows { rows: usize, folds: usize },
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error("bad model document: {0}")]
    BadDocument(String),
    #[error("model was fitted against a different feature dictionary")]
    DictionaryMismatch,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("corpus has no labeled sessions")]
    UnlabeledData,
    #[error("fewer than two classes survive filtering")]
    InsufficientClasses,
    #[error("config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Obfuscation(#[from] ObfuscationError),
}

#[derive(Debug, Error)]
pub enum ObfuscationError {
    #[error("corpus lacks a {0} family label")]
    MissingFamily(&'static str),
    #[error("label {0:?} matches no operating-system family rule")]
    UnknownFamily(String),
    #[error("window label {0:?} is not in the obfuscation mapping")]
    UnmappedLabel(String),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("bad spec document: {0}")]
    BadDocument(String),
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("bad session record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}
