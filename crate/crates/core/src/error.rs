//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("rating value {value} out of range for a {n_levels}-level scale (line {line})")]
    RatingRange {
        line: usize,
        value: String,
        n_levels: usize,
    },

    #[error("duplicate rating for user {user}, item {item} (line {line})")]
    Duplicate {
        user: String,
        item: String,
        line: usize,
    },

    #[error("corpus is empty after filtering")]
    EmptyCorpus,

    #[error("cannot split user {user}: needs at least 2 ratings, has {count}")]
    SplitTooFew { user: String, count: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),

    #[error("training diverged at epoch {epoch}: non-finite parameter")]
    Divergence { epoch: usize },

    #[error("cold start: {0}")]
    ColdStart(String),

    #[error("empty test set")]
    EmptyTestSet,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("archive: {0}")]
    Archive(String),

    #[error("archive version {found} not supported (reader supports {supported})")]
    ArchiveVersion { found: u32, supported: u32 },

    #[error("archive truncated: {0}")]
    ArchiveTruncated(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-parseable code for CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::RatingRange { .. } => "range",
            Error::Duplicate { .. } => "duplicate",
            Error::EmptyCorpus => "empty-corpus",
            Error::SplitTooFew { .. } => "split",
            Error::DegenerateData(_) => "degenerate",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Index(_) => "index",
            Error::EnumerationTooLarge(_) => "enumeration",
            Error::Divergence { .. } => "divergence",
            Error::ColdStart(_) => "coldstart",
            Error::EmptyTestSet => "empty-test",
            Error::Shape(_) => "shape",
            Error::Archive(_) => "archive",
            Error::ArchiveVersion { .. } => "archive-version",
            Error::ArchiveTruncated(_) => "archive-truncated",
            Error::Io(_) => "io",
        }
    }
}
