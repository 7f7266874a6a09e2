//! Online variational inference for the hierarchical Dirichlet process
//! topic model, in the two-level stick-breaking form.
//!
//! Corpus level: sticks `beta'_k ~ Beta(1, gamma)` truncated at `K_corpus`,
//! topics `phi_k ~ Dirichlet(eta)`. Document level: sticks
//! `pi'_t ~ Beta(1, alpha0)` truncated at `T_doc`, each document table `t`
//! picks a corpus topic `c_t` and each word picks a table `z_n`.
//!
//! Variational parameters: `lambda` (topics), `(u, v)` (corpus sticks),
//! per document `(a, b)` (document sticks), `varphi` (`q(c_t)`) and
//! `zeta` (`q(z_n)`, shared by all tokens of a distinct word).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::prob::{digamma, ln_gamma};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HdpError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite bound at sweep {sweep} of document {doc}")]
    Numerical { doc: String, sweep: usize },
    #[error("document {0} has no tokens")]
    EmptyDocument(String),
}

type Result<T> = std::result::Result<T, HdpError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdpHyper {
    pub gamma: f64,
    pub alpha0: f64,
    pub eta: f64,
    pub k_corpus: usize,
    pub t_doc: usize,
    pub kappa: f64,
    pub tau0: f64,
    pub doc_max_sweeps: usize,
    pub doc_tol: f64,
}

impl Default for HdpHyper {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alpha0: 1.0,
            eta: 0.01,
            k_corpus: 300,
            t_doc: 20,
            kappa: 0.6,
            tau0: 1.0,
            doc_max_sweeps: 100,
            doc_tol: 1e-5,
        }
    }
}

impl HdpHyper {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(HdpError::Config(format!("{name} must be > 0, got {x}")))
            }
        };
        pos("gamma", self.gamma)?;
        pos("alpha0", self.alpha0)?;
        pos("eta", self.eta)?;
        pos("doc_tol", self.doc_tol)?;
        if self.k_corpus == 0 || self.t_doc == 0 {
            return Err(HdpError::Config("truncations must be >= 1".into()));
        }
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(HdpError::Config(format!("kappa must be in (0.5, 1], got {}", self.kappa)));
        }
        if !(self.tau0 >= 0.0 && self.tau0.is_finite()) {
            return Err(HdpError::Config(format!("tau0 must be >= 0, got {}", self.tau0)));
        }
        if self.doc_max_sweeps == 0 {
            return Err(HdpError::Config("doc_max_sweeps must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate for update number `t` (zero-based).
    pub fn learning_rate(&self, t: u64) -> f64 {
        (self.tau0 + t as f64).powf(-self.kappa)
    }
}

/// Corpus-level variational state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalVariational {
    pub k_corpus: usize,
    pub vocab_size: usize,
    /// Row-major `K_corpus x V` Dirichlet parameters.
    pub lambda: Vec<f64>,
    pub stick_u: Vec<f64>,
    pub stick_v: Vec<f64>,
    pub update_count: u64,
}

impl GlobalVariational {
    /// Random initialization `eta + Gamma(1, 1) * D / (K V)`.
    pub fn init<R: Rng + ?Sized>(h: &HdpHyper, vocab_size: usize, corpus_size: usize, rng: &mut R) -> Result<Self> {
        h.validate()?;
        if vocab_size == 0 {
            return Err(HdpError::Config("vocabulary is empty".into()));
        }
        let scale = corpus_size.max(1) as f64 / (h.k_corpus * vocab_size) as f64;
        let g = Gamma::new(1.0, 1.0).expect("valid gamma");
        let lambda = (0..h.k_corpus * vocab_size).map(|_| h.eta + scale * g.sample(rng)).collect();
        Self::from_lambda(h, vocab_size, lambda)
    }

    /// State with the given topic parameters and uniform expected corpus weights.
    ///
    /// Rows are put in a canonical order (decreasing total mass), so any
    /// permutation of the same rows yields the same state.
    pub fn from_lambda(h: &HdpHyper, vocab_size: usize, lambda: Vec<f64>) -> Result<Self> {
        h.validate()?;
        let k = h.k_corpus;
        if vocab_size == 0 || lambda.len() != k * vocab_size {
            return Err(HdpError::Shape(format!("lambda has {} entries, expected {k} x {vocab_size}", lambda.len())));
        }
        let mut rows: Vec<&[f64]> = lambda.chunks(vocab_size).collect();
        rows.sort_by(|a, b| {
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            sb.total_cmp(&sa).then_with(|| {
                a.iter().zip(b.iter()).map(|(x, y)| y.total_cmp(x)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let lambda = rows.concat();
        let g = Self {
            k_corpus: k,
            vocab_size,
            lambda,
            stick_u: vec![1.0; k - 1],
            stick_v: (0..k - 1).map(|i| (k - 1 - i) as f64).collect(),
            update_count: 0,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.len() != self.k_corpus * self.vocab_size {
            return Err(HdpError::Shape("lambda size does not match K x V".into()));
        }
        if self.stick_u.len() + 1 != self.k_corpus || self.stick_v.len() + 1 != self.k_corpus {
            return Err(HdpError::Shape("stick vectors must have K - 1 entries".into()));
        }
        if self.lambda.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(HdpError::Config("lambda entries must be finite and >= 0".into()));
        }
        if (0..self.k_corpus).any(|k| !(self.row(k).iter().sum::<f64>() > 0.0)) {
            return Err(HdpError::Config("every lambda row needs positive mass".into()));
        }
        if self.stick_u.iter().chain(&self.stick_v).any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(HdpError::Config("stick parameters must be > 0".into()));
        }
        Ok(())
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.lambda[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.lambda[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.lambda.chunks(self.vocab_size).map(|r| r.iter().sum()).collect()
    }

    pub fn elog_sticks(&self) -> Vec<f64> {
        expect_log_sticks(&self.stick_u, &self.stick_v)
    }
}

/// `E[log beta_k]` for truncated stick-breaking with Beta(a_k, b_k) sticks;
/// the last component takes the remaining stick.
pub fn expect_log_sticks(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + 1);
    let mut rest = 0.0;
    for (&a, &b) in a.iter().zip(b) {
        let s = digamma(a + b);
        out.push(digamma(a) - s + rest);
        rest += digamma(b) - s;
    }
    out.push(rest);
    out
}

/// Stick weights from the expected fractions `a/(a+b)`.
pub fn expected_stick_weights(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + 1);
    let mut rest = 1.0;
    for (&a, &b) in a.iter().zip(b) {
        let f = a / (a + b);
        out.push(f * rest);
        rest *= 1.0 - f;
    }
    out.push(rest);
    out
}

pub fn expected_corpus_weights(g: &GlobalVariational) -> Vec<f64> {
    expected_stick_weights(&g.stick_u, &g.stick_v)
}

/// Posterior mean topic-word distributions, one row per topic.
pub fn topic_word_probs(g: &GlobalVariational) -> Vec<Vec<f64>> {
    g.lambda
        .chunks(g.vocab_size)
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Read-only view of the global state restricted to a set of words.
#[derive(Debug, Clone)]
pub struct TopicSnapshot {
    pub k_corpus: usize,
    pub elog_sticks: Vec<f64>,
    elog_beta: HashMap<usize, Vec<f64>>,
    probs: HashMap<usize, Vec<f64>>,
}

impl TopicSnapshot {
    pub fn new(g: &GlobalVariational, words: impl IntoIterator<Item = usize>) -> Result<Self> {
        let sums = g.row_sums();
        let dig_sums: Vec<f64> = sums.iter().map(|&s| digamma(s)).collect();
        let words: BTreeSet<usize> = words.into_iter().collect();
        if let Some(&w) = words.iter().find(|&&w| w >= g.vocab_size) {
            return Err(HdpError::Shape(format!("word {w} outside vocabulary of {}", g.vocab_size)));
        }
        let words: Vec<usize> = words.into_iter().collect();
        let cols: Vec<(usize, Vec<f64>, Vec<f64>)> = words
            .par_iter()
            .map(|&w| {
                let mut e = Vec::with_capacity(g.k_corpus);
                let mut p = Vec::with_capacity(g.k_corpus);
                for k in 0..g.k_corpus {
                    let l = g.lambda[k * g.vocab_size + w];
                    e.push(if l > 0.0 { digamma(l) - dig_sums[k] } else { f64::NEG_INFINITY });
                    p.push(l / sums[k]);
                }
                (w, e, p)
            })
            .collect();
        let mut elog_beta = HashMap::with_capacity(cols.len());
        let mut probs = HashMap::with_capacity(cols.len());
        for (w, e, p) in cols {
            elog_beta.insert(w, e);
            probs.insert(w, p);
        }
        Ok(Self { k_corpus: g.k_corpus, elog_sticks: g.elog_sticks(), elog_beta, probs })
    }

    pub fn for_documents(g: &GlobalVariational, docs: &[Document]) -> Result<Self> {
        Self::new(g, docs.iter().flat_map(|d| d.counts.iter().map(|c| c.0)))
    }

    fn elog_beta(&self, w: usize) -> Result<&[f64]> {
        self.elog_beta
            .get(&w)
            .map(Vec::as_slice)
            .ok_or_else(|| HdpError::Shape(format!("word {w} not in snapshot")))
    }

    fn probs(&self, w: usize) -> Result<&[f64]> {
        self.probs
            .get(&w)
            .map(Vec::as_slice)
            .ok_or_else(|| HdpError::Shape(format!("word {w} not in snapshot")))
    }
}

/// Per-document variational state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocVariational {
    pub t_doc: usize,
    pub k_corpus: usize,
    pub stick_a: Vec<f64>,
    pub stick_b: Vec<f64>,
    /// Row-major `T_doc x K_corpus`.
    pub varphi: Vec<f64>,
    /// Row-major `(distinct words) x T_doc`, in the document's word order.
    pub zeta: Vec<f64>,
}

impl DocVariational {
    pub fn varphi_row(&self, t: usize) -> &[f64] {
        &self.varphi[t * self.k_corpus..(t + 1) * self.k_corpus]
    }

    pub fn zeta_row(&self, n: usize) -> &[f64] {
        &self.zeta[n * self.t_doc..(n + 1) * self.t_doc]
    }

    /// Expected document-level table weights.
    pub fn table_weights(&self) -> Vec<f64> {
        expected_stick_weights(&self.stick_a, &self.stick_b)
    }

    /// Document mixture over corpus topics, `sum_t E[pi_t] varphi_tk`.
    pub fn topic_mixture(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.k_corpus];
        for (t, w) in self.table_weights().into_iter().enumerate() {
            for (th, v) in theta.iter_mut().zip(self.varphi_row(t)) {
                *th += w * v;
            }
        }
        theta
    }
}

/// Expected sufficient statistics of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub k_corpus: usize,
    /// Expected number of tables assigned to each corpus topic.
    pub var_sticks_ss: Vec<f64>,
    /// Expected word counts per topic, keyed by word.
    pub lambda_ss: BTreeMap<usize, Vec<f64>>,
    pub batch_doc_count: usize,
}

impl BatchStats {
    pub fn new(k_corpus: usize) -> Self {
        Self { k_corpus, var_sticks_ss: vec![0.0; k_corpus], lambda_ss: BTreeMap::new(), batch_doc_count: 0 }
    }

    pub fn merge(&mut self, other: &BatchStats) {
        for (a, b) in self.var_sticks_ss.iter_mut().zip(&other.var_sticks_ss) {
            *a += b;
        }
        for (w, col) in &other.lambda_ss {
            let e = self.lambda_ss.entry(*w).or_insert_with(|| vec![0.0; self.k_corpus]);
            for (a, b) in e.iter_mut().zip(col) {
                *a += b;
            }
        }
        self.batch_doc_count += other.batch_doc_count;
    }

    /// Expected count of word `w` under topic `k`.
    pub fn word_topic(&self, k: usize, w: usize) -> f64 {
        self.lambda_ss.get(&w).map_or(0.0, |c| c[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocResult {
    pub variational: DocVariational,
    pub stats: BatchStats,
    /// Bound after each sweep.
    pub elbo_trace: Vec<f64>,
}

impl DocResult {
    pub fn elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("at least one sweep")
    }
}

fn log_normalize(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
    let z = m + s.ln();
    for x in row.iter_mut() {
        *x -= z;
    }
}

#[inline]
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y
    }
}

fn doc_stick_bound(a: &[f64], b: &[f64], alpha0: f64) -> f64 {
    let mut l = 0.0;
    for (&a, &b) in a.iter().zip(b) {
        let s = a + b;
        let ds = digamma(s);
        l += alpha0.ln() + (1.0 - a) * (digamma(a) - ds) + (alpha0 - b) * (digamma(b) - ds) - ln_gamma(s)
            + ln_gamma(a)
            + ln_gamma(b);
    }
    l
}

/// Coordinate ascent for one document against a fixed global state.
pub fn infer_document(
    doc: &Document,
    g: &GlobalVariational,
    h: &HdpHyper,
    max_sweeps: usize,
    tol: f64,
) -> Result<DocResult> {
    h.validate()?;
    if g.k_corpus != h.k_corpus {
        return Err(HdpError::Shape("global state and hyperparameters disagree on K_corpus".into()));
    }
    let snap = TopicSnapshot::new(g, doc.counts.iter().map(|c| c.0))?;
    infer_document_with(doc, &snap, h, max_sweeps, tol)
}

/// [`infer_document`] against a prepared snapshot.
pub fn infer_document_with(
    doc: &Document,
    snap: &TopicSnapshot,
    h: &HdpHyper,
    max_sweeps: usize,
    tol: f64,
) -> Result<DocResult> {
    if doc.counts.is_empty() {
        return Err(HdpError::EmptyDocument(doc.id.clone()));
    }
    if max_sweeps == 0 {
        return Err(HdpError::Config("max_sweeps must be >= 1".into()));
    }
    let kk = snap.k_corpus;
    let tt = h.t_doc;
    let n = doc.counts.len();
    let counts: Vec<f64> = doc.counts.iter().map(|c| c.1 as f64).collect();
    let mut e = Vec::with_capacity(n * kk);
    for &(w, _) in &doc.counts {
        e.extend_from_slice(snap.elog_beta(w)?);
    }
    let elog1 = &snap.elog_sticks;

    // Start each word on the table holding its best topic; tables take the
    // topics with most mass first.
    let best: Vec<usize> = (0..n)
        .map(|i| {
            let row = &e[i * kk..(i + 1) * kk];
            (0..kk).max_by(|&a, &b| (row[a] + elog1[a]).total_cmp(&(row[b] + elog1[b])).then(b.cmp(&a))).unwrap()
        })
        .collect();
    let mut mass = vec![0.0; kk];
    for i in 0..n {
        mass[best[i]] += counts[i];
    }
    let mut ranked: Vec<usize> = (0..kk).filter(|&k| mass[k] > 0.0).collect();
    ranked.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    ranked.truncate(tt);
    let mut zeta = vec![0.0; n * tt];
    for i in 0..n {
        let row = &e[i * kk..(i + 1) * kk];
        let slot = ranked.iter().position(|&k| k == best[i]).unwrap_or_else(|| {
            (0..ranked.len()).max_by(|&x, &y| row[ranked[x]].total_cmp(&row[ranked[y]]).then(y.cmp(&x))).unwrap()
        });
        zeta[i * tt + slot] = 1.0;
    }

    let mut a = vec![1.0; tt - 1];
    let mut b = vec![h.alpha0; tt - 1];
    let mut elog2 = expect_log_sticks(&a, &b);
    let mut varphi = vec![0.0; tt * kk];
    let mut log_varphi = vec![0.0; tt * kk];
    let mut log_zeta = vec![0.0; n * tt];
    let mut dots = vec![0.0; n * tt];
    let mut trace = Vec::new();

    for sweep in 1..=max_sweeps {
        // varphi_tk ~ exp(E log beta_k + sum_n c_n zeta_nt E log phi_k,w_n)
        for t in 0..tt {
            log_varphi[t * kk..(t + 1) * kk].copy_from_slice(elog1);
        }
        for i in 0..n {
            let row = &e[i * kk..(i + 1) * kk];
            for t in 0..tt {
                let w = counts[i] * zeta[i * tt + t];
                if w == 0.0 {
                    continue;
                }
                for (lv, &x) in log_varphi[t * kk..(t + 1) * kk].iter_mut().zip(row) {
                    *lv += w * x;
                }
            }
        }
        for t in 0..tt {
            let r = &mut log_varphi[t * kk..(t + 1) * kk];
            log_normalize(r);
            for (v, &l) in varphi[t * kk..(t + 1) * kk].iter_mut().zip(r.iter()) {
                *v = l.exp();
            }
        }

        // zeta_nt ~ exp(E log pi_t + sum_k varphi_tk E log phi_k,w_n)
        for i in 0..n {
            let row = &e[i * kk..(i + 1) * kk];
            for t in 0..tt {
                let d: f64 = varphi[t * kk..(t + 1) * kk].iter().zip(row).map(|(&v, &x)| xlogy(v, x)).sum();
                dots[i * tt + t] = d;
                log_zeta[i * tt + t] = elog2[t] + d;
            }
            let r = &mut log_zeta[i * tt..(i + 1) * tt];
            log_normalize(r);
            for (z, &l) in zeta[i * tt..(i + 1) * tt].iter_mut().zip(r.iter()) {
                *z = l.exp();
            }
        }

        // document sticks
        let mut col = vec![0.0; tt];
        for i in 0..n {
            for t in 0..tt {
                col[t] += counts[i] * zeta[i * tt + t];
            }
        }
        let mut tail = 0.0;
        for t in (0..tt.saturating_sub(1)).rev() {
            tail += col[t + 1];
            a[t] = 1.0 + col[t];
            b[t] = h.alpha0 + tail;
        }
        elog2 = expect_log_sticks(&a, &b);

        let mut l = 0.0;
        for t in 0..tt {
            for k in 0..kk {
                let v = varphi[t * kk + k];
                l += xlogy(v, elog1[k] - log_varphi[t * kk + k]);
            }
        }
        l += doc_stick_bound(&a, &b, h.alpha0);
        for i in 0..n {
            for t in 0..tt {
                let z = zeta[i * tt + t];
                l += counts[i] * xlogy(z, elog2[t] - log_zeta[i * tt + t] + dots[i * tt + t]);
            }
        }
        if !l.is_finite() {
            return Err(HdpError::Numerical { doc: doc.id.clone(), sweep });
        }
        let prev = trace.last().copied();
        trace.push(l);
        if let Some(p) = prev {
            if ((l - p) / p.abs()).abs() < tol {
                break;
            }
        }
    }

    let mut stats = BatchStats::new(kk);
    stats.batch_doc_count = 1;
    for t in 0..tt {
        for k in 0..kk {
            stats.var_sticks_ss[k] += varphi[t * kk + k];
        }
    }
    for (i, &(w, _)) in doc.counts.iter().enumerate() {
        let mut col = vec![0.0; kk];
        for t in 0..tt {
            let z = counts[i] * zeta[i * tt + t];
            for (c, &v) in col.iter_mut().zip(&varphi[t * kk..(t + 1) * kk]) {
                *c += z * v;
            }
        }
        stats.lambda_ss.insert(w, col);
    }
    Ok(DocResult {
        variational: DocVariational { t_doc: tt, k_corpus: kk, stick_a: a, stick_b: b, varphi, zeta },
        stats,
        elbo_trace: trace,
    })
}

/// `sum_n c_n ln sum_k theta_k p(w_n | k)` for an inferred document.
pub fn score_document(doc: &Document, theta: &[f64], snap: &TopicSnapshot) -> Result<f64> {
    let mut ll = 0.0;
    for &(w, c) in &doc.counts {
        let p: f64 = theta.iter().zip(snap.probs(w)?).map(|(t, p)| t * p).sum();
        ll += c as f64 * p.ln();
    }
    Ok(ll)
}

/// Log-likelihood of `doc` in nats under the current state, after fitting
/// its document-level parameters.
pub fn heldout_doc_loglik(doc: &Document, g: &GlobalVariational, h: &HdpHyper) -> Result<f64> {
    let snap = TopicSnapshot::new(g, doc.counts.iter().map(|c| c.0))?;
    let r = infer_document_with(doc, &snap, h, h.doc_max_sweeps, h.doc_tol)?;
    score_document(doc, &r.variational.topic_mixture(), &snap)
}

/// Stochastic natural-gradient step with the scheduled learning rate.
pub fn online_update(g: &GlobalVariational, stats: &BatchStats, h: &HdpHyper, corpus_size: usize) -> Result<GlobalVariational> {
    let rho = h.learning_rate(g.update_count);
    online_update_with_rate(g, stats, h, corpus_size, rho)
}

/// Stochastic step `x <- (1 - rho) x + rho x_hat`, where `x_hat` is the
/// full-corpus estimate implied by the batch statistics.
pub fn online_update_with_rate(
    g: &GlobalVariational,
    stats: &BatchStats,
    h: &HdpHyper,
    corpus_size: usize,
    rho: f64,
) -> Result<GlobalVariational> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(HdpError::Config(format!("learning rate {rho} outside (0, 1]")));
    }
    if stats.batch_doc_count == 0 {
        return Err(HdpError::Config("batch statistics cover no documents".into()));
    }
    if stats.k_corpus != g.k_corpus {
        return Err(HdpError::Shape("statistics and state disagree on K_corpus".into()));
    }
    if let Some((&w, _)) = stats.lambda_ss.range(g.vocab_size..).next() {
        return Err(HdpError::Shape(format!("statistics mention word {w} outside the vocabulary")));
    }
    let scale = corpus_size as f64 / stats.batch_doc_count as f64;
    let mut out = g.clone();
    for x in out.lambda.iter_mut() {
        *x = (1.0 - rho) * *x + rho * h.eta;
    }
    let v = g.vocab_size;
    for (&w, col) in &stats.lambda_ss {
        for (k, &s) in col.iter().enumerate() {
            out.lambda[k * v + w] += rho * scale * s;
        }
    }
    let kk = g.k_corpus;
    let mut tail = 0.0;
    for k in (0..kk.saturating_sub(1)).rev() {
        tail += stats.var_sticks_ss[k + 1];
        out.stick_u[k] = (1.0 - rho) * g.stick_u[k] + rho * (1.0 + scale * stats.var_sticks_ss[k]);
        out.stick_v[k] = (1.0 - rho) * g.stick_v[k] + rho * (h.gamma + scale * tail);
    }
    out.update_count += 1;
    Ok(out)
}

/// Prequential score of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScore {
    pub id: String,
    pub timestamp: f64,
    pub loglik: f64,
    pub tokens: u64,
}

impl DocScore {
    pub fn per_word(&self) -> f64 {
        self.loglik / self.tokens as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub scores: Vec<DocScore>,
    /// Final per-document bound, in batch order.
    pub doc_elbos: Vec<f64>,
    /// Whether every per-document bound trace was non-decreasing.
    pub elbo_monotone: bool,
    pub learning_rate: f64,
    /// Document topic mixtures, in batch order.
    pub mixtures: Vec<Vec<f64>>,
}

/// Runs inference for every document of a batch in parallel and scores each
/// document before any learning from the batch takes place.
pub fn infer_batch(
    docs: &[Document],
    g: &GlobalVariational,
    h: &HdpHyper,
) -> Result<(TopicSnapshot, Vec<DocResult>, Vec<DocScore>)> {
    let snap = TopicSnapshot::for_documents(g, docs)?;
    let results: Vec<(DocResult, DocScore)> = docs
        .par_iter()
        .map(|d| {
            let r = infer_document_with(d, &snap, h, h.doc_max_sweeps, h.doc_tol)?;
            let loglik = score_document(d, &r.variational.topic_mixture(), &snap)?;
            let s = DocScore { id: d.id.clone(), timestamp: d.timestamp, loglik, tokens: d.total_tokens() };
            Ok((r, s))
        })
        .collect::<Result<_>>()?;
    let (rs, ss) = results.into_iter().unzip();
    Ok((snap, rs, ss))
}

pub(crate) fn elbo_is_monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0))
}

/// Streaming oHDP: one online update per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineHdp {
    pub hyper: HdpHyper,
    pub global: GlobalVariational,
    /// Corpus size `D` used to scale batch statistics.
    pub corpus_size: usize,
}

impl OnlineHdp {
    pub fn new<R: Rng + ?Sized>(hyper: HdpHyper, vocab_size: usize, corpus_size: usize, rng: &mut R) -> Result<Self> {
        if corpus_size == 0 {
            return Err(HdpError::Config("corpus size must be >= 1".into()));
        }
        let global = GlobalVariational::init(&hyper, vocab_size, corpus_size, rng)?;
        Ok(Self { hyper, global, corpus_size })
    }

    pub fn process_batch(&mut self, docs: &[Document]) -> Result<BatchResult> {
        if docs.is_empty() {
            return Err(HdpError::Config("empty batch".into()));
        }
        let (_, results, scores) = infer_batch(docs, &self.global, &self.hyper)?;
        let mut stats = BatchStats::new(self.hyper.k_corpus);
        for r in &results {
            stats.merge(&r.stats);
        }
        let rho = self.hyper.learning_rate(self.global.update_count);
        self.global = online_update(&self.global, &stats, &self.hyper, self.corpus_size)?;
        Ok(BatchResult {
            elbo_monotone: results.iter().all(|r| elbo_is_monotone(&r.elbo_trace)),
            doc_elbos: results.iter().map(DocResult::elbo).collect(),
            mixtures: results.iter().map(|r| r.variational.topic_mixture()).collect(),
            scores,
            learning_rate: rho,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, counts: &[(usize, u32)]) -> Document {
        Document { id: id.into(), timestamp: 0.0, title: String::new(), counts: counts.to_vec(), related: vec![] }
    }

    fn small_hyper(k: usize, t: usize) -> HdpHyper {
        HdpHyper { k_corpus: k, t_doc: t, ..HdpHyper::default() }
    }

    #[test]
    fn corpus_weights_examples() {
        let w = expected_stick_weights(&[1.0; 3], &[1.0; 3]);
        assert_eq!(w, vec![0.5, 0.25, 0.125, 0.125]);
        let w = expected_stick_weights(&[1.0, 2.0], &[0.0, 1.0]);
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
        let h = small_hyper(5, 3);
        let g = GlobalVariational::from_lambda(&h, 2, vec![1.0; 10]).unwrap();
        for x in expected_corpus_weights(&g) {
            assert_abs_diff_eq!(x, 0.2, epsilon = 1e-15);
        }
    }

    proptest! {
        #[test]
        fn corpus_weights_match_product_form(u in proptest::collection::vec(0.01f64..50.0, 1..30), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = u.iter().map(|_| rng.random_range(0.01..50.0)).collect();
            let w = expected_stick_weights(&u, &v);
            let k = u.len() + 1;
            for i in 0..k {
                let mut p = if i < k - 1 { u[i] / (u[i] + v[i]) } else { 1.0 };
                for l in 0..i {
                    p *= v[l] / (u[l] + v[l]);
                }
                prop_assert!((w[i] - p).abs() < 1e-12);
            }
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn topic_word_probs_normalized() {
        let h = small_hyper(2, 2);
        let g = GlobalVariational::from_lambda(&h, 2, vec![3.0, 1.0, 2.0, 2.0]).unwrap();
        let p = topic_word_probs(&g);
        assert_eq!(p[0], vec![0.75, 0.25]);
        assert_eq!(p[1], vec![0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GlobalVariational::init(&small_hyper(7, 3), 40, 100, &mut rng).unwrap();
        for row in topic_word_probs(&g) {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_topic_takes_everything() {
        let h = small_hyper(1, 3);
        let g = GlobalVariational::from_lambda(&h, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let r = infer_document(&doc("d", &[(0, 2), (2, 1)]), &g, &h, 50, 1e-10).unwrap();
        assert!(r.variational.varphi.iter().all(|&v| v == 1.0));
        assert_abs_diff_eq!(r.stats.word_topic(0, 0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.stats.word_topic(0, 2), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn one_word_with_uniform_topics_follows_the_sticks() {
        let h = HdpHyper { alpha0: 0.7, ..small_hyper(4, 3) };
        let mut g = GlobalVariational::from_lambda(&h, 2, vec![1.0; 8]).unwrap();
        g.stick_u = vec![2.0, 1.0, 3.0];
        g.stick_v = vec![1.0, 4.0, 0.5];
        let r = infer_document(&doc("d", &[(1, 3)]), &g, &h, 500, 1e-14).unwrap();
        let dv = &r.variational;
        // topics enter only through the corpus sticks
        let mut want = g.elog_sticks();
        log_normalize(&mut want);
        for t in 0..3 {
            for k in 0..4 {
                assert_abs_diff_eq!(dv.varphi_row(t)[k], want[k].exp(), epsilon = 1e-12);
            }
        }
        // zeta is the softmax of the document sticks, which are fit to it
        let a: Vec<f64> = (0..2).map(|t| 1.0 + 3.0 * dv.zeta_row(0)[t]).collect();
        let b: Vec<f64> = (0..2).map(|t| 0.7 + 3.0 * dv.zeta_row(0)[t + 1..].iter().sum::<f64>()).collect();
        let mut z = expect_log_sticks(&a, &b);
        log_normalize(&mut z);
        for t in 0..3 {
            assert_abs_diff_eq!(dv.zeta_row(0)[t], z[t].exp(), epsilon = 1e-6);
        }
    }

    #[test]
    fn rows_normalized_and_bound_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = small_hyper(12, 5);
        let g = GlobalVariational::init(&h, 30, 200, &mut rng).unwrap();
        let counts: Vec<(usize, u32)> = (0..20).map(|i| (i, 1 + (i as u32 * 7) % 4)).collect();
        let r = infer_document(&doc("d", &counts), &g, &h, 10, 1e-300).unwrap();
        assert_eq!(r.elbo_trace.len(), 10);
        assert!(elbo_is_monotone(&r.elbo_trace), "{:?}", r.elbo_trace);
        for t in 0..5 {
            assert_abs_diff_eq!(r.variational.varphi_row(t).iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        }
        for n in 0..20 {
            assert_abs_diff_eq!(r.variational.zeta_row(n).iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(r.stats.var_sticks_ss.iter().sum::<f64>(), 5.0, epsilon = 1e-10);
        let tokens: f64 = r.stats.lambda_ss.values().flatten().sum();
        assert_abs_diff_eq!(tokens, counts.iter().map(|c| c.1 as f64).sum::<f64>(), epsilon = 1e-9);
    }

    #[test]
    fn heldout_examples() {
        let h = small_hyper(3, 2);
        let g = GlobalVariational::from_lambda(&h, 4, vec![1.0; 12]).unwrap();
        let d = doc("d", &[(0, 2), (3, 5)]);
        assert_abs_diff_eq!(heldout_doc_loglik(&d, &g, &h).unwrap(), 7.0 * (0.25f64).ln(), epsilon = 1e-12);

        let g = GlobalVariational::from_lambda(&small_hyper(2, 2), 3, vec![0.0, 5.0, 0.0, 0.0, 5.0, 0.0]).unwrap();
        let d = doc("d", &[(1, 4)]);
        assert_abs_diff_eq!(heldout_doc_loglik(&d, &g, &small_hyper(2, 2)).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn heldout_matches_brute_force_mixture() {
        let h = small_hyper(2, 2);
        let g = GlobalVariational::from_lambda(&h, 3, vec![4.0, 1.0, 1.0, 1.0, 1.0, 6.0]).unwrap();
        let d = doc("d", &[(0, 3), (2, 2)]);
        let r = infer_document(&d, &g, &h, h.doc_max_sweeps, h.doc_tol).unwrap();
        let dv = &r.variational;
        let pi = [dv.stick_a[0] / (dv.stick_a[0] + dv.stick_b[0]), dv.stick_b[0] / (dv.stick_a[0] + dv.stick_b[0])];
        // rows are stored heaviest first
        let probs = [[1.0 / 8.0, 1.0 / 8.0, 6.0 / 8.0], [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]];
        let mut want = 0.0;
        for &(w, c) in &d.counts {
            let mut p = 0.0;
            for t in 0..2 {
                for k in 0..2 {
                    p += pi[t] * dv.varphi_row(t)[k] * probs[k][w];
                }
            }
            want += c as f64 * p.ln();
        }
        assert_abs_diff_eq!(heldout_doc_loglik(&d, &g, &h).unwrap(), want, epsilon = 1e-12);
    }

    fn toy_batch() -> Vec<Document> {
        vec![
            doc("a", &[(0, 3), (1, 1)]),
            doc("b", &[(1, 2), (4, 2)]),
            doc("c", &[(2, 5)]),
            doc("d", &[(3, 1), (4, 1), (5, 2)]),
            doc("e", &[(0, 1), (5, 4)]),
        ]
    }

    #[test]
    fn full_step_equals_batch_m_step() {
        let h = small_hyper(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GlobalVariational::init(&h, 6, 5, &mut rng).unwrap();
        let docs = toy_batch();
        let mut stats = BatchStats::new(4);
        for d in &docs {
            stats.merge(&infer_document(d, &g, &h, 100, 1e-8).unwrap().stats);
        }
        assert_eq!(h.learning_rate(0), 1.0);
        let up = online_update(&g, &stats, &h, 5).unwrap();
        for k in 0..4 {
            for w in 0..6 {
                assert_abs_diff_eq!(up.row(k)[w], h.eta + stats.word_topic(k, w), epsilon = 1e-12);
            }
        }
        for k in 0..3 {
            assert_abs_diff_eq!(up.stick_u[k], 1.0 + stats.var_sticks_ss[k], epsilon = 1e-12);
            let tail: f64 = stats.var_sticks_ss[k + 1..].iter().sum();
            assert_abs_diff_eq!(up.stick_v[k], h.gamma + tail, epsilon = 1e-12);
        }
        assert_eq!(up.update_count, 1);
    }

    #[test]
    fn half_steps_halve_the_distance() {
        let h = small_hyper(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g0 = GlobalVariational::init(&h, 6, 5, &mut rng).unwrap();
        let mut stats = BatchStats::new(3);
        for d in &toy_batch() {
            stats.merge(&infer_document(d, &g0, &h, 100, 1e-8).unwrap().stats);
        }
        let target = online_update_with_rate(&g0, &stats, &h, 10, 1.0).unwrap();
        let dist = |g: &GlobalVariational| -> f64 {
            g.lambda.iter().zip(&target.lambda).map(|(a, b)| (a - b).abs()).sum::<f64>()
        };
        let g1 = online_update_with_rate(&g0, &stats, &h, 10, 0.5).unwrap();
        let g2 = online_update_with_rate(&g1, &stats, &h, 10, 0.5).unwrap();
        assert_abs_diff_eq!(dist(&g1), 0.5 * dist(&g0), epsilon = 1e-10);
        assert_abs_diff_eq!(dist(&g2), 0.25 * dist(&g0), epsilon = 1e-10);
    }

    #[test]
    fn update_guards() {
        let h = small_hyper(3, 2);
        let g = GlobalVariational::from_lambda(&h, 2, vec![1.0; 6]).unwrap();
        let stats = BatchStats::new(3);
        assert!(matches!(online_update(&g, &stats, &h, 10), Err(HdpError::Config(_))));
        let mut stats = BatchStats::new(3);
        stats.batch_doc_count = 1;
        assert!(online_update_with_rate(&g, &stats, &h, 10, 1.5).is_err());
        assert!(online_update_with_rate(&g, &stats, &h, 10, 0.0).is_err());
        let h0 = HdpHyper { tau0: 0.0, ..h };
        assert!(online_update(&g, &stats, &h0, 10).is_err());
    }

    #[test]
    fn permuted_initial_rows_give_the_same_state() {
        let h = small_hyper(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = GlobalVariational::init(&h, 6, 5, &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|k| g.row(k).to_vec()).collect();
        let perm = [3, 0, 4, 1, 2];
        let lambda: Vec<f64> = perm.iter().flat_map(|&k| rows[k].clone()).collect();
        let g2 = GlobalVariational::from_lambda(&h, 6, lambda).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn rejects_bad_documents() {
        let h = small_hyper(2, 2);
        let g = GlobalVariational::from_lambda(&h, 2, vec![1.0; 4]).unwrap();
        assert!(matches!(infer_document(&doc("e", &[]), &g, &h, 10, 1e-6), Err(HdpError::EmptyDocument(_))));
        assert!(matches!(infer_document(&doc("x", &[(5, 1)]), &g, &h, 10, 1e-6), Err(HdpError::Shape(_))));
    }
}
