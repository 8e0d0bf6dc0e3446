use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate rating for user {user}, item {item}")]
    DuplicateEntry { user: usize, item: usize },

    #[error("entry ({user}, {item}) is outside a {n_users}x{n_items} matrix")]
    OutOfBounds {
        user: usize,
        item: usize,
        n_users: usize,
        n_items: usize,
    },

    #[error("rating {0} is outside the valid range")]
    InvalidRating(i64),

    #[error("matrix has no entries")]
    EmptyMatrix,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("factor {0} has a negative entry")]
    NegativeFactor(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("membership covers {got} rows, expected {expected}")]
    MembershipSizeMismatch { expected: usize, got: usize },

    #[error("need at least 2 observed entries to split, got {0}")]
    TooFewEntries(usize),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no ratings left after filtering")]
    EmptyAfterFilter,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier printed by the command-line tool.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DuplicateEntry { .. } => "DuplicateEntry",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidRating(_) => "InvalidRating",
            Error::EmptyMatrix => "EmptyMatrix",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NegativeFactor(_) => "NegativeFactor",
            Error::NonFinite(_) => "NonFinite",
            Error::Diverged(_) => "Diverged",
            Error::MembershipSizeMismatch { .. } => "MembershipSizeMismatch",
            Error::TooFewEntries(_) => "TooFewEntries",
            Error::EmptyTestSet => "EmptyTestSet",
            Error::FileNotFound(_) => "FileNotFound",
            Error::Parse { .. } => "ParseError",
            Error::EmptyAfterFilter => "EmptyAfterFilter",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Usage(_) => "Usage",
            Error::Io(_) => "Io",
        }
    }

    /// Process exit status: 1 usage, 2 data, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Usage(_) => 1,
            Error::Diverged(_) | Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
