use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {reason}")]
    Malformed { file: String, line: usize, reason: String },

    #[error("{file}:{line}: rating {value} outside 1..=5")]
    RatingOutOfRange { file: String, line: usize, value: i64 },

    #[error("duplicate rating for user {user_id}, item {item_id}")]
    DuplicateRating { user_id: u32, item_id: u32 },

    #[error("rating references unknown {kind} {id}")]
    DanglingReference { kind: &'static str, id: u32 },

    #[error("unknown genre {0:?}")]
    UnknownGenre(String),

    #[error("user {user_id} has {count} ratings, fewer than the required {min}")]
    TooFewRatings { user_id: u32, count: usize, min: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no value for ({row}, {col}) in {measure} matrix; assess this pair manually")]
    MissingEntry { measure: String, row: String, col: String },

    #[error("user profiles are required for this operation")]
    NoUserProfiles,

    #[error("could not sample a target with at least {needed} ratings after {attempts} attempts")]
    ResampleLimit { needed: usize, attempts: usize },

    #[error("criteria not assessed: {}", .0.join(", "))]
    CriteriaNotAssessed(Vec<String>),

    #[error("record {0} is not pending")]
    RecordClosed(String),

    #[error("an open assessment already exists for this purpose pair: {0}")]
    DuplicateOpenRecord(String),

    #[error("unknown purpose {0:?}")]
    UnknownPurpose(String),

    #[error("unknown record {0:?}")]
    UnknownRecord(String),

    #[error("registry unavailable ({reason}); draft spooled to {}", .spooled.display())]
    RegistryUnavailable { reason: String, spooled: PathBuf },

    #[error("purpose {0:?} already exists")]
    DuplicatePurpose(String),

    #[error("criterion a_link needs automated evidence when both purposes have a computational binding")]
    LinkEvidenceRequired,

    #[error("store schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: String, expected: u32 },

    #[error("store is locked by another writer ({})", .0.display())]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn malformed(file: &str, line: usize, reason: impl Into<String>) -> Self {
        Error::Malformed {
            file: file.to_string(),
            line,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the input data rather than by how the
    /// tool was invoked.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Malformed { .. }
                | Error::RatingOutOfRange { .. }
                | Error::DuplicateRating { .. }
                | Error::DanglingReference { .. }
                | Error::UnknownGenre(_)
                | Error::TooFewRatings { .. }
                | Error::EmptyDataset
                | Error::MissingEntry { .. }
                | Error::NoUserProfiles
                | Error::ResampleLimit { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::SchemaVersion { .. }
        )
    }
}
