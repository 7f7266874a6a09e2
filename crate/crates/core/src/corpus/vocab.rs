use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_timestamp, CorpusError, Document, RawDocument, Result, TokenizerConfig};

pub const DEFAULT_MIN_DOC_FREQ: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_documents: usize,
    pub vocab_size: usize,
    /// Mean number of distinct tokens per document, before frequency filtering.
    pub mean_unique_terms: f64,
}

/// Dense term index. Terms are sorted, so index order is lexicographic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    document_frequency: Vec<usize>,
    /// Tokens of retained terms over the corpus the vocabulary was built from.
    pub total_terms: u64,
    pub stats: CorpusStats,
}

impl Vocabulary {
    /// Vocabulary over `terms` in the given order, without frequency information.
    pub fn from_terms(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if t.is_empty() || index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::Config(format!("duplicate or empty term {t:?} at index {i}")));
            }
        }
        let n = terms.len();
        Ok(Self {
            terms,
            index,
            document_frequency: vec![0; n],
            total_terms: 0,
            stats: CorpusStats { vocab_size: n, ..Default::default() },
        })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, i: usize) -> Option<&str> {
        self.terms.get(i).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Zero for vocabularies loaded from a term list.
    pub fn document_frequency(&self, i: usize) -> usize {
        self.document_frequency[i]
    }
}

/// Builds the vocabulary of terms that occur in at least `min_doc_freq` documents.
pub fn build_vocabulary(docs: &[RawDocument], cfg: &TokenizerConfig, min_doc_freq: usize) -> Result<Vocabulary> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(CorpusError::Config("no documents to build a vocabulary from".into()));
    }
    let per_doc: Vec<HashMap<String, u64>> = docs
        .par_iter()
        .map(|d| {
            let mut m = HashMap::new();
            cfg.for_each_token(&d.body, |t| *m.entry(t).or_insert(0) += 1);
            m
        })
        .collect();

    let mut df: BTreeMap<&str, (usize, u64)> = BTreeMap::new();
    for m in &per_doc {
        for (t, &c) in m {
            let e = df.entry(t.as_str()).or_insert((0, 0));
            e.0 += 1;
            e.1 += c;
        }
    }
    let unique: usize = per_doc.iter().map(HashMap::len).sum();
    let kept: Vec<(&str, usize, u64)> =
        df.into_iter().filter(|(_, (n, _))| *n >= min_doc_freq).map(|(t, (n, c))| (t, n, c)).collect();
    if kept.is_empty() {
        return Err(CorpusError::Config(format!("no term occurs in at least {min_doc_freq} documents")));
    }
    let mut vocab = Vocabulary::from_terms(kept.iter().map(|(t, _, _)| t.to_string()).collect())?;
    vocab.document_frequency = kept.iter().map(|k| k.1).collect();
    vocab.total_terms = kept.iter().map(|k| k.2).sum();
    vocab.stats = CorpusStats {
        num_documents: docs.len(),
        vocab_size: vocab.len(),
        mean_unique_terms: unique as f64 / docs.len() as f64,
    };
    Ok(vocab)
}

/// Maps raw documents onto `vocab`, sorted by timestamp then id.
///
/// Unknown terms are dropped; documents left empty or with an unparseable
/// timestamp are dropped with a warning.
pub fn to_documents(docs: &[RawDocument], vocab: &Vocabulary, cfg: &TokenizerConfig) -> Vec<Document> {
    let mut out: Vec<Document> = docs
        .par_iter()
        .filter_map(|d| {
            let ts = match parse_timestamp(&d.timestamp_text, d.format) {
                Ok(ts) => ts,
                Err(e) => {
                    warn!("document {}: {e}; dropped", d.id);
                    return None;
                }
            };
            let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
            cfg.for_each_token(&d.body, |t| {
                if let Some(i) = vocab.index_of(&t) {
                    *counts.entry(i).or_insert(0) += 1;
                }
            });
            if counts.is_empty() {
                return None;
            }
            Some(Document {
                id: d.id.clone(),
                timestamp: ts,
                title: d.title.clone(),
                counts: counts.into_iter().collect(),
                related: d.related_ids.clone(),
            })
        })
        .collect();
    out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
    let mut seen = HashSet::new();
    for d in &out {
        if !seen.insert(d.id.as_str()) {
            warn!("duplicate document id {}", d.id);
        }
    }
    out
}
