use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("index {index} out of range for {len} prototypes")]
    PrototypeIndex { index: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown override key `{0}`")]
    UnknownOverride(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("both positive and negative samples are required")]
    SingleClassFlags,
    #[error("no training clips with label {0} to push class prototypes onto")]
    EmptyPushClass(usize),
    #[error("prototype {0} has no push provenance; run a push first")]
    MissingProvenance(usize),
    #[error("split needs {needed} studies but only {available} exist")]
    NotEnoughStudies { needed: usize, available: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::PrototypeIndex { .. } => "prototype_index",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::UnknownOverride(_) => "unknown_override",
            Error::Empty(_) => "empty",
            Error::MissingClass(_) => "missing_class",
            Error::SingleClassFlags => "single_class_flags",
            Error::EmptyPushClass(_) => "empty_push_class",
            Error::MissingProvenance(_) => "missing_provenance",
            Error::NotEnoughStudies { .. } => "not_enough_studies",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Image { .. } => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
