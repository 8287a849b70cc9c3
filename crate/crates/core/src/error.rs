use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("malformed coordinate text: {0}")]
    MalformedOutput(String),
    #[error("coordinate out of range: {0}")]
    OutOfRange(String),
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("crop window is empty ({width}x{height} px)")]
    EmptyCrop { width: u32, height: u32 },
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("screen has no elements to select from")]
    NoElements,
    #[error("empty pixel region")]
    EmptyInput,
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum LossLabError {
    #[error("token {0} is not a digit token")]
    NonDigitTarget(usize),
    #[error("invalid reweighting scheme: {0}")]
    InvalidScheme(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("coordinate digit run `{0}` is longer than three digits")]
    DigitRunTooLong(String),
    #[error("malformed array file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum PostTrainError {
    #[error("rollout set `{0}` has no rollouts")]
    EmptyRollouts(String),
    #[error("round index {index} outside schedule of {rounds} rounds")]
    RoundOutOfRange { index: usize, rounds: usize },
    #[error("pair for `{0}` failed re-verification against its ground-truth box")]
    PairVerification(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("schema error at line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("missing image `{0}`")]
    MissingImage(String),
    #[error("prediction references unknown record `{0}`")]
    UnknownRecordId(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
