//! Corpus ingestion: news-record parsers, tokenization, vocabulary, the
//! canonical line-delimited format and timestamp-ordered batching.

mod bbc;
mod canonical;
mod reuters;
mod timestamp;
mod tokenize;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bbc::parse_bbc;
pub use canonical::{read_canonical, read_vocabulary, write_canonical, write_vocabulary};
pub use reuters::parse_reuters;
pub use timestamp::{parse_timestamp, TimestampFormat};
pub use tokenize::{default_stopwords, tokenize, TokenizerConfig};
pub use vocab::{build_vocabulary, to_documents, CorpusStats, Vocabulary, DEFAULT_MIN_DOC_FREQ};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("cannot parse timestamp {text:?} as {format:?}")]
    Timestamp { text: String, format: TimestampFormat },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// A news record as found in the source files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub timestamp_text: String,
    pub format: TimestampFormat,
    pub title: String,
    pub body: String,
    pub related_ids: Vec<String>,
}

/// Output of a parser: the documents kept plus how many records were dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseOutcome {
    pub documents: Vec<RawDocument>,
    pub skipped: usize,
}

impl ParseOutcome {
    pub fn total_records(&self) -> usize {
        self.documents.len() + self.skipped
    }
}

/// Bag-of-words document over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: f64,
    pub title: String,
    /// `(word index, count)` pairs, strictly increasing in the index.
    pub counts: Vec<(usize, u32)>,
    pub related: Vec<String>,
}

impl Document {
    pub fn total_tokens(&self) -> u64 {
        self.counts.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn unique_terms(&self) -> usize {
        self.counts.len()
    }
}

/// Splits `docs` into consecutive batches of `batch_size`; the last one may be short.
pub fn batch_iter(docs: &[Document], batch_size: usize) -> Result<std::slice::Chunks<'_, Document>> {
    if batch_size == 0 {
        return Err(CorpusError::Parameter("batch size must be >= 1".into()));
    }
    Ok(docs.chunks(batch_size))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(i: usize) -> Document {
        Document { id: i.to_string(), timestamp: i as f64, title: String::new(), counts: vec![(0, 1)], related: vec![] }
    }

    #[test]
    fn batches() {
        let docs: Vec<Document> = (0..10).map(doc).collect();
        let sizes: Vec<usize> = batch_iter(&docs, 4).unwrap().map(<[_]>::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(batch_iter(&docs, 50).unwrap().count(), 1);
        let joined: Vec<Document> = batch_iter(&docs, 3).unwrap().flatten().cloned().collect();
        assert_eq!(joined, docs);
        assert!(matches!(batch_iter(&docs, 0), Err(CorpusError::Parameter(_))));
    }
}
