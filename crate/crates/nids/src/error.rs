use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown attack name(s) not present in the mapping: {names:?}")]
    UnknownAttack { names: Vec<String> },

    #[error("out-of-vocabulary value {value:?} for feature {feature}")]
    OutOfVocabulary { feature: String, value: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("shape error in layer {layer}: {message}")]
    LayerShape { layer: String, message: String },

    #[error("resampling infeasible: {0}")]
    Resample(String),

    #[error("training diverged: non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("single-class input: {0}")]
    SingleClass(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
