use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("line {line}: label {label:?} is not in the declared label set")]
    UnknownLabel { line: usize, label: String },

    #[error("class {class:?} has {count} units, at least 4 are needed to form quarters")]
    ClassTooSmall { class: String, count: usize },

    #[error("round {round} is not valid for a {rotation} scenario")]
    InvalidRound {
        round: usize,
        rotation: &'static str,
    },

    #[error("sample {0:?} resolves into more than one of train/validation/test")]
    Overlap(String),

    #[error("reference group {0:?} has no candidates in the training set")]
    UnknownGroup(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("rotation angle {0} deg is outside the supported range [-90, 90]")]
    AngleOutOfRange(f64),

    #[error("augmentation needs at least one source image")]
    EmptySources,

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("degenerate embedding: pre-normalization norm {0:e} is below 1e-12")]
    DegenerateEmbedding(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("neighbor count k = {k} must be at least 1 and below the group size {n}")]
    InvalidK { k: usize, n: usize },

    #[error("reference group is empty")]
    EmptyGroup,

    #[error("evaluation needs both normal and abnormal records")]
    SingleClass,

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("sample {0:?} has no feature row")]
    MissingFeature(String),

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("degenerate covariance for cluster {0:?}")]
    DegenerateCovariance(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
