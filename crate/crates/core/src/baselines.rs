//! Fixed-K continuous-time dynamic topic model (cDTM-style baseline).
//!
//! Topic natural parameters live on a grid of time bins and follow Brownian
//! motion between bins. Training alternates
//!
//! * a per-document variational E-step (Dirichlet mixture, multinomial
//!   assignments) against the topics at the document's bin, and
//! * a per-topic M-step: a Kalman smoother over the bins proposes new
//!   trajectories from the expected counts, and a backtracking line search
//!   toward that proposal keeps the bound from decreasing.
//!
//! Scoring interpolates the trajectories linearly between bins, which is the
//! posterior mean of a Brownian bridge.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::kalman::{smooth_track, DriftConfig, KalmanError, ObservationTrack};
use crate::ohdp::DocScore;
use crate::prob::{digamma, ln_gamma, log_sum_exp};
use crate::synth::DAY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CdtmError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("model has not been trained")]
    State,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
}

type Result<T> = std::result::Result<T, CdtmError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdtmConfig {
    /// Symmetric Dirichlet prior on document mixtures.
    pub alpha: f64,
    /// Brownian drift variance per day. Zero gives a static model.
    pub drift_v_per_day: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
    /// Pseudo-count added to expected counts when forming observations.
    pub obs_smoothing: f64,
    /// Upper bound on the number of time bins.
    pub time_bins: usize,
    pub sweeps: usize,
    /// Relative bound improvement below which training stops early.
    pub tol: f64,
    pub doc_max_iter: usize,
    pub doc_tol: f64,
}

impl Default for CdtmConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            drift_v_per_day: 0.005,
            prior_mean: 0.0,
            prior_var: 1.0,
            obs_smoothing: 0.5,
            time_bins: 16,
            sweeps: 30,
            tol: 1e-7,
            doc_max_iter: 100,
            doc_tol: 1e-6,
        }
    }
}

impl CdtmConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(CdtmError::Parameter(format!("{name} must be > 0, got {x}")))
            }
        };
        pos("alpha", self.alpha)?;
        pos("prior_var", self.prior_var)?;
        pos("obs_smoothing", self.obs_smoothing)?;
        pos("doc_tol", self.doc_tol)?;
        if !(self.drift_v_per_day >= 0.0 && self.drift_v_per_day.is_finite()) {
            return Err(CdtmError::Parameter(format!("drift_v_per_day must be >= 0, got {}", self.drift_v_per_day)));
        }
        if !self.prior_mean.is_finite() || !(self.tol >= 0.0) {
            return Err(CdtmError::Parameter("prior_mean must be finite and tol >= 0".into()));
        }
        if self.time_bins == 0 || self.sweeps == 0 || self.doc_max_iter == 0 {
            return Err(CdtmError::Parameter("time_bins, sweeps and doc_max_iter must be >= 1".into()));
        }
        Ok(())
    }

    fn drift_v(&self) -> f64 {
        self.drift_v_per_day / DAY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdtmModel {
    pub k: usize,
    pub vocab_size: usize,
    pub config: CdtmConfig,
    /// Bin timestamps, strictly increasing.
    pub steps: Vec<f64>,
    /// Natural parameters indexed `[topic][step][word]`.
    pub natural: Vec<f64>,
    pub trained: bool,
    /// Bound after each training sweep.
    pub objective_trace: Vec<f64>,
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(x);
    x.iter().map(|v| v - z).collect()
}

impl CdtmModel {
    /// Model with the given parameters, marked as trained.
    pub fn from_parameters(k: usize, vocab_size: usize, config: CdtmConfig, steps: Vec<f64>, natural: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if k == 0 || vocab_size == 0 || steps.is_empty() {
            return Err(CdtmError::Parameter("need K >= 1, a vocabulary and at least one step".into()));
        }
        if natural.len() != k * steps.len() * vocab_size {
            return Err(CdtmError::Shape(format!(
                "{} natural parameters for {k} topics x {} steps x {vocab_size} words",
                natural.len(),
                steps.len()
            )));
        }
        if steps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CdtmError::Parameter("steps must be strictly increasing".into()));
        }
        Ok(Self { k, vocab_size, config, steps, natural, trained: true, objective_trace: vec![] })
    }

    fn slice(&self, k: usize, s: usize) -> &[f64] {
        let v = self.vocab_size;
        let o = (k * self.steps.len() + s) * v;
        &self.natural[o..o + v]
    }

    fn topic_path(&self, k: usize) -> &[f64] {
        let n = self.steps.len() * self.vocab_size;
        &self.natural[k * n..(k + 1) * n]
    }

    /// Natural parameters of topic `k` at time `ts`.
    pub fn natural_at(&self, k: usize, ts: f64) -> Vec<f64> {
        let s = &self.steps;
        let i = s.partition_point(|&x| x <= ts);
        if i == 0 {
            return self.slice(k, 0).to_vec();
        }
        if i == s.len() {
            return self.slice(k, s.len() - 1).to_vec();
        }
        let w = (ts - s[i - 1]) / (s[i] - s[i - 1]);
        self.slice(k, i - 1).iter().zip(self.slice(k, i)).map(|(a, b)| (1.0 - w) * a + w * b).collect()
    }

    /// Log topic-word probabilities of every topic at time `ts`.
    pub fn log_topics_at(&self, ts: f64) -> Vec<Vec<f64>> {
        (0..self.k).map(|k| log_softmax(&self.natural_at(k, ts))).collect()
    }

    pub fn topic_word_distribution(&self, k: usize, ts: f64) -> Vec<f64> {
        log_softmax(&self.natural_at(k, ts)).into_iter().map(f64::exp).collect()
    }
}

/// Groups documents into at most `max_bins` contiguous bins of similar size,
/// never splitting a timestamp. Returns bin times and the bin of each document.
fn time_bins(docs: &[Document], max_bins: usize) -> (Vec<f64>, Vec<usize>) {
    let n = docs.len();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && docs[end].timestamp == docs[start].timestamp {
            end += 1;
        }
        groups.push((start, end));
        start = end;
    }
    let target = n.div_ceil(max_bins);
    let mut bins: Vec<(usize, usize)> = Vec::new();
    for (a, b) in groups {
        match bins.last_mut() {
            Some(last) if last.1 - last.0 < target => last.1 = b,
            _ => bins.push((a, b)),
        }
    }
    if bins.len() > max_bins {
        let tail = bins.pop().expect("non-empty");
        bins.last_mut().expect("two bins").1 = tail.1;
    }
    let mut times = Vec::with_capacity(bins.len());
    let mut of_doc = vec![0; n];
    for (i, &(a, b)) in bins.iter().enumerate() {
        times.push(docs[a..b].iter().map(|d| d.timestamp).sum::<f64>() / (b - a) as f64);
        of_doc[a..b].iter_mut().for_each(|x| *x = i);
    }
    (times, of_doc)
}

struct DocFit {
    gamma: Vec<f64>,
    /// Expected counts per word, `K` entries each.
    counts: Vec<(usize, Vec<f64>)>,
}

fn elog_theta(gamma: &[f64]) -> Vec<f64> {
    let ds = digamma(gamma.iter().sum());
    gamma.iter().map(|&g| digamma(g) - ds).collect()
}

/// Bound of one document with assignments maximized out.
fn doc_bound(doc: &Document, gamma: &[f64], log_topics: &[Vec<f64>], alpha: f64) -> f64 {
    let k = gamma.len() as f64;
    let e = elog_theta(gamma);
    let mut l = ln_gamma(k * alpha) - k * ln_gamma(alpha) - ln_gamma(gamma.iter().sum());
    for (&g, &el) in gamma.iter().zip(&e) {
        l += ln_gamma(g) + (alpha - g) * el;
    }
    let mut buf = vec![0.0; gamma.len()];
    for &(w, c) in &doc.counts {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = e[j] + log_topics[j][w];
        }
        l += c as f64 * log_sum_exp(&buf);
    }
    l
}

fn fit_document(doc: &Document, mut gamma: Vec<f64>, log_topics: &[Vec<f64>], cfg: &CdtmConfig) -> DocFit {
    let k = gamma.len();
    let mut phi = vec![vec![0.0; k]; doc.counts.len()];
    for _ in 0..cfg.doc_max_iter {
        let e = elog_theta(&gamma);
        let mut next = vec![cfg.alpha; k];
        for (row, &(w, c)) in phi.iter_mut().zip(&doc.counts) {
            for (j, p) in row.iter_mut().enumerate() {
                *p = e[j] + log_topics[j][w];
            }
            let z = log_sum_exp(row);
            for (j, p) in row.iter_mut().enumerate() {
                *p = (*p - z).exp();
                next[j] += c as f64 * *p;
            }
        }
        let change = next.iter().zip(&gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        gamma = next;
        if change < cfg.doc_tol {
            break;
        }
    }
    // assignments consistent with the final mixture
    let e = elog_theta(&gamma);
    let counts = doc
        .counts
        .iter()
        .map(|&(w, c)| {
            let mut row: Vec<f64> = (0..k).map(|j| e[j] + log_topics[j][w]).collect();
            let z = log_sum_exp(&row);
            row.iter_mut().for_each(|p| *p = c as f64 * (*p - z).exp());
            (w, row)
        })
        .collect();
    DocFit { gamma, counts }
}

fn gaussian_ln(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// Expected complete log-likelihood of one topic path plus its drift prior.
fn topic_objective(path: &[f64], counts: &[f64], steps: &[f64], v: usize, cfg: &CdtmConfig) -> f64 {
    let mut f = 0.0;
    for s in 0..steps.len() {
        let x = &path[s * v..(s + 1) * v];
        let c = &counts[s * v..(s + 1) * v];
        let total: f64 = c.iter().sum();
        f += c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() - total * log_sum_exp(x);
    }
    for w in 0..v {
        f += gaussian_ln(path[w], cfg.prior_mean, cfg.prior_var);
        for s in 1..steps.len() {
            let q = cfg.drift_v() * (steps[s] - steps[s - 1]);
            f += gaussian_ln(path[s * v + w], path[(s - 1) * v + w], q);
        }
    }
    f
}

/// Kalman-smoothed trajectory for one topic from its expected counts.
fn propose_path(counts: &[f64], steps: &[f64], v: usize, cfg: &CdtmConfig) -> Result<Vec<f64>> {
    let n = steps.len();
    let sm = cfg.obs_smoothing;
    let mut beta = vec![0.0; n * v];
    let mut var = vec![0.0; n * v];
    for s in 0..n {
        let c = &counts[s * v..(s + 1) * v];
        let denom = (c.iter().sum::<f64>() + v as f64 * sm).ln();
        let row: Vec<f64> = c.iter().map(|x| (x + sm).ln() - denom).collect();
        let mean = row.iter().sum::<f64>() / v as f64;
        for w in 0..v {
            beta[s * v + w] = row[w] - mean;
            var[s * v + w] = 1.0 / (c[w] + sm);
        }
    }
    // a single bin has no transitions, so any positive drift will do
    let q = if cfg.drift_v() > 0.0 { cfg.drift_v() } else { 1.0 };
    let dc = DriftConfig::new(q, cfg.prior_mean, cfg.prior_var)?;
    let mut out = vec![0.0; n * v];
    for w in 0..v {
        let track = ObservationTrack {
            timestamps: steps.to_vec(),
            beta_hat: (0..n).map(|s| beta[s * v + w]).collect(),
            obs_variance: (0..n).map(|s| var[s * v + w]).collect(),
            present: vec![true; n],
        };
        let post = smooth_track(&track, &dc)?;
        for s in 0..n {
            out[s * v + w] = post.smoothed_mean[s];
        }
    }
    Ok(out)
}

fn line_search(old: &[f64], proposal: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let base = f(old);
    let mut step = 1.0;
    for _ in 0..30 {
        let cand: Vec<f64> = old.iter().zip(proposal).map(|(a, b)| a + step * (b - a)).collect();
        if f(&cand) >= base {
            return cand;
        }
        step *= 0.5;
    }
    old.to_vec()
}

/// Trains a fixed-K model on timestamp-ordered documents.
pub fn train_cdtm<R: Rng + ?Sized>(
    docs: &[Document],
    vocab_size: usize,
    k: usize,
    cfg: &CdtmConfig,
    rng: &mut R,
) -> Result<CdtmModel> {
    cfg.validate()?;
    if k == 0 {
        return Err(CdtmError::Parameter("K must be >= 1".into()));
    }
    if docs.is_empty() || vocab_size == 0 {
        return Err(CdtmError::Parameter("need documents and a non-empty vocabulary".into()));
    }
    if let Some(i) = docs.windows(2).position(|w| !(w[1].timestamp >= w[0].timestamp)) {
        return Err(CdtmError::Parameter(format!("documents out of timestamp order at index {}", i + 1)));
    }
    if docs.iter().any(|d| d.counts.iter().any(|c| c.0 >= vocab_size)) {
        return Err(CdtmError::Shape("word index outside the vocabulary".into()));
    }
    let (steps, bin_of) = if cfg.drift_v_per_day == 0.0 {
        let mean = docs.iter().map(|d| d.timestamp).sum::<f64>() / docs.len() as f64;
        (vec![mean], vec![0; docs.len()])
    } else {
        time_bins(docs, cfg.time_bins)
    };
    let n_steps = steps.len();
    let v = vocab_size;

    let tokens: u64 = docs.iter().map(Document::total_tokens).sum();
    let scale = tokens as f64 / (k * v) as f64;
    let g = Gamma::new(1.0, 1.0).expect("valid gamma");
    let mut natural = Vec::with_capacity(k * n_steps * v);
    for _ in 0..k {
        let row: Vec<f64> = (0..v).map(|_| (1.0 + scale * g.sample(rng)).ln()).collect();
        let mean = row.iter().sum::<f64>() / v as f64;
        for _ in 0..n_steps {
            natural.extend(row.iter().map(|x| x - mean));
        }
    }
    let mut model = CdtmModel { k, vocab_size, config: *cfg, steps, natural, trained: false, objective_trace: vec![] };
    let mut gammas: Vec<Vec<f64>> =
        docs.iter().map(|d| vec![cfg.alpha + d.total_tokens() as f64 / k as f64; k]).collect();

    let log_topics = |m: &CdtmModel| -> Vec<Vec<Vec<f64>>> {
        (0..n_steps).map(|s| (0..k).map(|j| log_softmax(m.slice(j, s))).collect()).collect()
    };
    let objective = |m: &CdtmModel, gammas: &[Vec<f64>], lt: &[Vec<Vec<f64>>]| -> f64 {
        let docs_part: f64 = docs
            .par_iter()
            .zip(gammas)
            .enumerate()
            .map(|(i, (d, g))| doc_bound(d, g, &lt[bin_of[i]], cfg.alpha))
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        let zero = vec![0.0; n_steps * v];
        let prior: f64 = (0..k).map(|j| topic_objective(m.topic_path(j), &zero, &m.steps, v, cfg)).sum();
        docs_part + prior
    };

    let mut lt = log_topics(&model);
    for _ in 0..cfg.sweeps {
        let fits: Vec<DocFit> = docs
            .par_iter()
            .zip(gammas.par_iter())
            .enumerate()
            .map(|(i, (d, g))| fit_document(d, g.clone(), &lt[bin_of[i]], cfg))
            .collect();
        let mut counts = vec![0.0; k * n_steps * v];
        for (i, f) in fits.iter().enumerate() {
            for (w, row) in &f.counts {
                for (j, c) in row.iter().enumerate() {
                    counts[(j * n_steps + bin_of[i]) * v + w] += c;
                }
            }
        }
        gammas = fits.into_iter().map(|f| f.gamma).collect();

        let paths: Vec<Vec<f64>> = (0..k)
            .into_par_iter()
            .map(|j| {
                let c = &counts[j * n_steps * v..(j + 1) * n_steps * v];
                let old = model.topic_path(j);
                let proposal = propose_path(c, &model.steps, v, cfg)?;
                Ok(line_search(old, &proposal, |p| topic_objective(p, c, &model.steps, v, cfg)))
            })
            .collect::<Result<_>>()?;
        model.natural = paths.concat();
        lt = log_topics(&model);
        let j = objective(&model, &gammas, &lt);
        let prev = model.objective_trace.last().copied();
        model.objective_trace.push(j);
        if let Some(p) = prev {
            if (j - p).abs() <= cfg.tol * p.abs().max(1.0) {
                break;
            }
        }
    }
    model.trained = true;
    Ok(model)
}

/// Posterior mean mixture of a document under the topics at its timestamp.
pub fn cdtm_doc_mixture(model: &CdtmModel, doc: &Document) -> Result<Vec<f64>> {
    if !model.trained {
        return Err(CdtmError::State);
    }
    let lt = model.log_topics_at(doc.timestamp);
    Ok(mixture(model, doc, &lt))
}

fn mixture(model: &CdtmModel, doc: &Document, lt: &[Vec<f64>]) -> Vec<f64> {
    let k = model.k;
    let g0 = vec![model.config.alpha + doc.total_tokens() as f64 / k as f64; k];
    let fit = fit_document(doc, g0, lt, &model.config);
    let s: f64 = fit.gamma.iter().sum();
    fit.gamma.iter().map(|g| g / s).collect()
}

/// Predictive log-likelihood of each document under the topics at its
/// timestamp. Nothing is learned.
pub fn cdtm_heldout_loglik(model: &CdtmModel, docs: &[Document]) -> Result<Vec<DocScore>> {
    if !model.trained {
        return Err(CdtmError::State);
    }
    if docs.iter().any(|d| d.counts.iter().any(|c| c.0 >= model.vocab_size)) {
        return Err(CdtmError::Shape("word index outside the vocabulary".into()));
    }
    let mut cache: BTreeMap<u64, Vec<Vec<f64>>> = BTreeMap::new();
    for d in docs {
        cache.entry(d.timestamp.to_bits()).or_insert_with(|| model.log_topics_at(d.timestamp));
    }
    Ok(docs
        .par_iter()
        .map(|d| {
            let lt = &cache[&d.timestamp.to_bits()];
            let theta = mixture(model, d, lt);
            let loglik = d
                .counts
                .iter()
                .map(|&(w, c)| {
                    let terms: Vec<f64> = (0..model.k).map(|j| theta[j].ln() + lt[j][w]).collect();
                    c as f64 * log_sum_exp(&terms)
                })
                .sum();
            DocScore { id: d.id.clone(), timestamp: d.timestamp, loglik, tokens: d.total_tokens() }
        })
        .collect())
}
