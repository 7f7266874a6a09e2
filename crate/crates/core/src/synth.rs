//! Seeded synthetic document streams with known topics.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::prob::{sample_dirichlet, sample_multinomial};

pub const DAY: f64 = 86_400.0;

/// Documents plus the generating topic of each one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub vocab_size: usize,
    pub docs: Vec<Document>,
    /// Dominant generating topic per document.
    pub doc_topic: Vec<usize>,
}

impl SyntheticCorpus {
    pub fn vocabulary(&self) -> Vec<String> {
        (0..self.vocab_size).map(|w| format!("w{w:03}")).collect()
    }
}

fn make_doc(i: usize, ts: f64, word_probs: &[f64], len: u64, rng: &mut ChaCha8Rng) -> Document {
    let counts = sample_multinomial(len, word_probs, rng).expect("valid word distribution");
    Document {
        id: format!("d{i:06}"),
        timestamp: ts,
        title: String::new(),
        counts: counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(w, &c)| (w, c as u32)).collect(),
        related: vec![],
    }
}

fn mix(topics: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    let v = topics[0].len();
    let mut p = vec![0.0; v];
    for (t, &th) in topics.iter().zip(theta) {
        for (pw, &x) in p.iter_mut().zip(t) {
            *pw += th * x;
        }
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// Topics concentrated on disjoint blocks of the vocabulary, with a small
/// amount of mass spread over every word.
pub fn block_topics(n_topics: usize, vocab_size: usize, leak: f64) -> Vec<Vec<f64>> {
    let block = vocab_size / n_topics;
    (0..n_topics)
        .map(|k| {
            let lo = k * block;
            let hi = if k + 1 == n_topics { vocab_size } else { lo + block };
            let mut p: Vec<f64> = (0..vocab_size)
                .map(|w| if (lo..hi).contains(&w) { 1.0 + ((w - lo) % 5) as f64 } else { 0.0 })
                .collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x = (1.0 - leak) * *x / s + leak / vocab_size as f64);
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticSpec {
    pub n_docs: usize,
    pub vocab_size: usize,
    pub n_topics: usize,
    pub min_len: u64,
    pub max_len: u64,
    /// Dirichlet concentration of the per-document topic mixture.
    pub doc_concentration: f64,
    /// Symmetric Dirichlet concentration of the topics.
    pub topic_concentration: f64,
    /// Seconds between consecutive documents.
    pub spacing: f64,
}

impl Default for StaticSpec {
    fn default() -> Self {
        Self {
            n_docs: 500,
            vocab_size: 50,
            n_topics: 3,
            min_len: 30,
            max_len: 60,
            doc_concentration: 0.2,
            topic_concentration: 0.1,
            spacing: 3600.0,
        }
    }
}

/// Documents drawn from a fixed topic model with random Dirichlet topics.
pub fn static_corpus(spec: &StaticSpec, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topics: Vec<Vec<f64>> = (0..spec.n_topics)
        .map(|_| sample_dirichlet(&vec![spec.topic_concentration; spec.vocab_size], &mut rng).expect("valid"))
        .collect();
    let mut docs = Vec::with_capacity(spec.n_docs);
    let mut doc_topic = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let theta = sample_dirichlet(&vec![spec.doc_concentration; spec.n_topics], &mut rng).expect("valid");
        let len = rng.random_range(spec.min_len..=spec.max_len);
        docs.push(make_doc(i, i as f64 * spec.spacing, &mix(&topics, &theta), len, &mut rng));
        doc_topic.push((0..spec.n_topics).max_by(|&a, &b| theta[a].total_cmp(&theta[b])).unwrap());
    }
    SyntheticCorpus { vocab_size: spec.vocab_size, docs, doc_topic }
}

/// Two block topics over `vocab_size` words; the second one slides linearly
/// from its own block onto a block of fresh words over the stream.
pub fn linear_drift_corpus(n_docs: usize, vocab_size: usize, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = block_topics(3, vocab_size, 0.02);
    let mut docs = Vec::with_capacity(n_docs);
    let mut doc_topic = Vec::with_capacity(n_docs);
    let mut ts = 0.0;
    for i in 0..n_docs {
        let frac = i as f64 / n_docs.max(2) as f64;
        let k = rng.random_range(0..2);
        let p = if k == 0 { base[0].clone() } else { mix(&base[1..], &[1.0 - frac, frac]) };
        let len = rng.random_range(30..=50);
        docs.push(make_doc(i, ts, &p, len, &mut rng));
        doc_topic.push(k);
        ts += rng.random_range(0.5..1.5) * DAY / 10.0;
    }
    SyntheticCorpus { vocab_size, docs, doc_topic }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DormancySpec {
    pub vocab_size: usize,
    pub docs_per_day: f64,
    pub pre_gap_days: f64,
    pub gap_days: f64,
    pub post_gap_days: f64,
    /// Share of the dormant topic's mass that moves to new words during the gap.
    pub shift: f64,
}

impl Default for DormancySpec {
    fn default() -> Self {
        Self { vocab_size: 80, docs_per_day: 6.0, pre_gap_days: 60.0, gap_days: 90.0, post_gap_days: 30.0, shift: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DormancyStream {
    pub corpus: SyntheticCorpus,
    /// Topic that goes silent during the gap.
    pub dormant_topic: usize,
    pub gap_start: f64,
    pub gap_end: f64,
}

impl DormancyStream {
    /// Indices of the dormant topic's documents after the gap.
    pub fn post_gap_docs(&self) -> Vec<usize> {
        (0..self.corpus.docs.len())
            .filter(|&i| self.corpus.doc_topic[i] == self.dormant_topic && self.corpus.docs[i].timestamp >= self.gap_end)
            .collect()
    }
}

/// Three topics; topic 0 goes silent for `gap_days` and returns with part of
/// its mass moved onto words no topic used before.
pub fn dormancy_stream(spec: &DormancySpec, seed: u64) -> DormancyStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = spec.vocab_size;
    let fresh = v / 4;
    let base = block_topics(3, v - fresh, 0.02);
    let pad = |p: &[f64]| -> Vec<f64> { p.iter().copied().chain(std::iter::repeat_n(0.0, fresh)).collect() };
    let mut topics: Vec<Vec<f64>> = base.iter().map(|p| pad(p)).collect();
    for t in topics.iter_mut() {
        // a trace of every word so no document is impossible
        t.iter_mut().for_each(|x| *x = 0.995 * *x + 0.005 / v as f64);
    }
    let mut shifted = topics[0].clone();
    let fresh_block: Vec<f64> = (0..fresh).map(|i| 1.0 + (i % 4) as f64).collect();
    let fs: f64 = fresh_block.iter().sum();
    for x in shifted.iter_mut() {
        *x *= 1.0 - spec.shift;
    }
    for (i, f) in fresh_block.iter().enumerate() {
        shifted[v - fresh + i] += spec.shift * f / fs;
    }

    let gap_start = spec.pre_gap_days * DAY;
    let gap_end = gap_start + spec.gap_days * DAY;
    let end = gap_end + spec.post_gap_days * DAY;
    let mut docs = Vec::new();
    let mut doc_topic = Vec::new();
    let mut ts = 0.0;
    let mean_gap = DAY / spec.docs_per_day;
    while ts < end {
        let in_gap = ts >= gap_start && ts < gap_end;
        let k = if in_gap { rng.random_range(1..3) } else { rng.random_range(0..3) };
        let p = if k == 0 && ts >= gap_end { &shifted } else { &topics[k] };
        let len = rng.random_range(30..=50);
        docs.push(make_doc(docs.len(), ts, p, len, &mut rng));
        doc_topic.push(k);
        ts += rng.random_range(0.5..1.5) * mean_gap;
    }
    DormancyStream { corpus: SyntheticCorpus { vocab_size: v, docs, doc_topic }, dormant_topic: 0, gap_start, gap_end }
}

/// Summary of a corpus for quick inspection.
pub fn word_totals(docs: &[Document]) -> BTreeMap<usize, u64> {
    let mut m = BTreeMap::new();
    for d in docs {
        for &(w, c) in &d.counts {
            *m.entry(w).or_insert(0) += c as u64;
        }
    }
    m
}
