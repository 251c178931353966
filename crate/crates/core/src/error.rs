//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path} at byte offset {offset} (line {line}, column {column}): {message}")]
    Json {
        path: PathBuf,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("ontology error: {0}")]
    Ontology(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("span file error: {0}")]
    Span(String),

    #[error("entity filter error: {0}")]
    Filter(String),

    #[error("masking config error: {0}")]
    Masking(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wrap a serde_json error with the byte offset into `text` where it occurred.
    pub(crate) fn from_json(path: &std::path::Path, text: &str, err: &serde_json::Error) -> Self {
        let (line, column) = (err.line(), err.column());
        Error::Json {
            path: path.to_path_buf(),
            offset: byte_offset(text, line, column),
            line,
            column,
            message: err.to_string(),
        }
    }
}

/// Convert serde_json's 1-based (line, column) into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (idx, l) in text.split('\n').enumerate() {
        if idx + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}
