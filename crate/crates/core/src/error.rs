//! Error type shared by all graphforge modules.

use thiserror::Error;

/// Errors produced by dataset ingestion, hashing, training, and graph building.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed row: {message}")]
    MalformedRow {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: mode '{mode}' expects dim {expected}, got {actual}")]
    DimMismatch {
        path: String,
        line: usize,
        mode: String,
        expected: usize,
        actual: usize,
    },

    #[error("duplicate point id '{0}'")]
    DuplicateId(String),

    #[error("label {label} out of range for {class_count} classes (point '{id}')")]
    LabelOutOfRange {
        id: String,
        label: usize,
        class_count: usize,
    },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("vector dim mismatch: {left} vs {right}")]
    VectorDimMismatch { left: usize, right: usize },

    #[error("hash family '{family}' is not compatible with mode '{mode}'")]
    FamilyModeMismatch { family: String, mode: String },

    #[error("no candidate pairs produced by the sketch configuration")]
    EmptyCandidates,

    #[error("pair harvest produced no training pairs; hashing failed to co-bucket labeled points")]
    EmptyHarvest,

    #[error("training set contains a single label class; cannot fit a pair classifier")]
    SingleLabelSet,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("all-pairs scoring refused: {pairs} pairs exceed budget {budget}")]
    PairBudgetExceeded { pairs: u64, budget: u64 },

    #[error("model/schema mismatch: model was trained against schema hash {model:#018x}, dataset has {dataset:#018x}")]
    SchemaModelMismatch { model: u64, dataset: u64 },

    #[error("model file {path} is invalid: {message}")]
    BadModelFile { path: String, message: String },

    #[error("graph file {path}:{line}: {message}")]
    BadGraphFile {
        path: String,
        line: usize,
        message: String,
    },

    #[error("protocol is degenerate: {0}")]
    DegenerateProtocol(String),

    #[error("grid exhausted without a valid configuration")]
    GridExhausted,

    #[error("precision-recall curve needs at least one positive")]
    NoPositives,

    #[error("unknown propagation rule '{0}'")]
    UnknownRule(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
