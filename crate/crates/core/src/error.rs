use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Which side of an entity an encoder consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Textual,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Visual => f.write_str("visual"),
            Modality::Textual => f.write_str("textual"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {image}: {reason}")]
    Image { image: String, reason: String },

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("duplicate entity {0}")]
    DuplicateEntity(String),

    #[error("entity {0} has neither an image nor a description")]
    EmptyEntity(String),

    #[error("duplicate mention {0}")]
    DuplicateMention(String),

    #[error("mention {mention_id}: invalid bbox: {reason}")]
    InvalidBBox { mention_id: String, reason: String },

    #[error("mention {mention_id}: unknown entity {entity_id}")]
    UnknownEntity {
        mention_id: String,
        entity_id: String,
    },

    #[error("missing gold label for mention {0}")]
    MissingGold(String),

    #[error("entity {entity_id} has no {modality} description")]
    MissingModality {
        entity_id: String,
        modality: Modality,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("degenerate embedding: zero or non-finite vector")]
    DegenerateEmbedding,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index is empty: no entity has a {0} description")]
    EmptyIndex(Modality),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("test split infeasible: requested {requested} images with unique entities, at most {max_feasible} possible")]
    SplitInfeasible { requested: usize, max_feasible: usize },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, reason: impl std::fmt::Display) -> Self {
        Error::Parse {
            location: location.into(),
            reason: reason.to_string(),
        }
    }

    /// True for failures caused by the filesystem or unreadable media rather
    /// than by the content of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Image { .. })
    }
}
