//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by dataset handling, model fitting, probing,
/// aggregation and pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}: {message}")]
    CsvRow { row: usize, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("label {label} at row {row} outside declared class set [0, {n_classes})")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        n_classes: usize,
    },

    #[error("duplicate example id `{0}`")]
    DuplicateId(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid feature map: {0}")]
    InvalidFeatureMap(String),

    #[error("split fractions must sum to 1, got {0}")]
    BadFractions(f64),

    #[error("class {0} has fewer examples than splits")]
    ClassTooSmall(usize),

    #[error("validation_kind=clean requires clean labels")]
    CleanLabelsRequired,

    #[error("noise error: {0}")]
    Noise(String),

    #[error("true class {0} is empty; transition matrix column undefined")]
    EmptyTrueClass(usize),

    #[error("model error: {0}")]
    Model(String),

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("model family `{family}` does not support {capability}")]
    MissingCapability {
        family: &'static str,
        capability: &'static str,
    },

    #[error("unknown identifier `{got}` for {what}; expected one of: {options}")]
    UnknownIdentifier {
        what: &'static str,
        got: String,
        options: String,
    },

    #[error(
        "leave-one-out with n={n} exceeds the cap of {cap}; use `kfold:<k>` for large datasets"
    )]
    LooTooLarge { n: usize, cap: usize },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("incompatible detector: {0}")]
    IncompatibleDetector(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}
