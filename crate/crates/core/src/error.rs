//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        path: PathBuf,
        id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("instance {id:?}: {message}")]
    InvalidInstance { id: String, message: String },

    #[error("run {question_id:?}: rank gap: expected rank {expected}, found {found}")]
    RankGap {
        question_id: String,
        expected: u32,
        found: u32,
    },

    #[error("run {question_id:?}: rank/score inconsistency at rank {rank}")]
    RankScoreInconsistency { question_id: String, rank: u32 },

    #[error("undefined recall: empty reference token set")]
    UndefinedRecall,

    #[error("undefined jaccard: both token sets empty")]
    UndefinedJaccard,

    #[error("empty answer token sequence")]
    EmptyAnswer,

    #[error("cannot build index over an empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index file {path}: {message}")]
    IndexFormat { path: PathBuf, message: String },

    #[error("question {question_id:?}: degenerate long-form answer (no tokens after normalization)")]
    DegenerateLfa { question_id: String },

    #[error("question {question_id:?}: empty candidate pool")]
    EmptyPool { question_id: String },

    #[error("question {question_id:?}: no long-form answer available")]
    MissingLfa { question_id: String },

    #[error("unknown passage id {passage_id:?}")]
    UnknownPassage { passage_id: String },

    #[error("service {endpoint}: {message}")]
    Service { endpoint: String, message: String },

    #[error("service contract violation: {0}")]
    ServiceContract(String),

    #[error("cannot aggregate: no questions")]
    NoQuestions,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(
        path: impl Into<PathBuf>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Malformed {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
