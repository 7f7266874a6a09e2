//! Continuous-time infinite dynamic topic model.
//!
//! Online HDP inference whose topic-word parameters additionally drift as
//! Brownian motion in continuous time. After the usual online update of a
//! batch, every (topic, word) pair observed in documents relevant to the topic
//! becomes a Kalman track over the batch's timestamps:
//!
//! * the observation at each step where the word occurs is the log of the
//!   topic-word probability implied by the batch statistics,
//! * the prior is the topic's current log-probability for the word with the
//!   variance carried over from earlier batches (or `prior_var` for a word the
//!   topic has never tracked) plus the drift accumulated since,
//! * the smoothed value at the last step replaces the word's probability and
//!   the topic row is renormalized with its total mass kept.
//!
//! Topics also carry an Active/Dead lifecycle driven by relevant documents.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::kalman::{smooth_track, DriftConfig, KalmanError, ObservationTrack};
use crate::ohdp::{
    elbo_is_monotone, infer_batch, online_update, BatchStats, DocResult, DocScore, GlobalVariational, HdpError,
    HdpHyper,
};
use crate::synth::DAY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CidtmError {
    #[error(transparent)]
    Hdp(#[from] HdpError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error("batch is not in timestamp order at document {index} ({prev} -> {next})")]
    Ordering { index: usize, prev: f64, next: f64 },
    #[error("time moved backwards: clock is {clock}, requested {to}")]
    TimeRegression { clock: f64, to: f64 },
    #[error("lifecycle protocol violation: {0}")]
    Protocol(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, CidtmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopicState {
    Active,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicLifecycle {
    pub state: TopicState,
    pub timer_deadline: f64,
    /// Timestamp of the last event, for ordering checks.
    pub last_event: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LifecycleEvent {
    TopicBorn(f64),
    RelevantDoc(f64),
    IrrelevantDoc(f64),
}

impl LifecycleEvent {
    pub fn timestamp(&self) -> f64 {
        match *self {
            Self::TopicBorn(t) | Self::RelevantDoc(t) | Self::IrrelevantDoc(t) => t,
        }
    }
}

/// Applies one event. `lc` is `None` for a topic that has not been born.
pub fn lifecycle_step(lc: Option<TopicLifecycle>, event: LifecycleEvent, timer_len: f64) -> Result<TopicLifecycle> {
    let ts = event.timestamp();
    if !ts.is_finite() {
        return Err(CidtmError::Protocol(format!("event timestamp {ts} is not finite")));
    }
    let lc = match (lc, event) {
        (None, LifecycleEvent::TopicBorn(_)) => {
            return Ok(TopicLifecycle { state: TopicState::Active, timer_deadline: ts + timer_len, last_event: ts })
        }
        (None, e) => return Err(CidtmError::Protocol(format!("{e:?} before the topic was born"))),
        (Some(_), LifecycleEvent::TopicBorn(_)) => return Err(CidtmError::Protocol("topic born twice".into())),
        (Some(lc), _) => lc,
    };
    if ts < lc.last_event {
        return Err(CidtmError::Protocol(format!("event at {ts} precedes previous event at {}", lc.last_event)));
    }
    let mut next = TopicLifecycle { last_event: ts, ..lc };
    match event {
        LifecycleEvent::RelevantDoc(_) => {
            next.state = TopicState::Active;
            next.timer_deadline = ts + timer_len;
        }
        LifecycleEvent::IrrelevantDoc(_) => {
            if lc.state == TopicState::Active && ts > lc.timer_deadline {
                next.state = TopicState::Dead;
            }
        }
        LifecycleEvent::TopicBorn(_) => unreachable!(),
    }
    Ok(next)
}

/// Drift state of one topic. Words missing from the maps sit at the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftingTopic {
    pub topic_index: usize,
    pub word_mean: BTreeMap<usize, f64>,
    pub word_var: BTreeMap<usize, f64>,
    pub last_update_ts: f64,
    pub lifecycle: Option<TopicLifecycle>,
}

impl DriftingTopic {
    pub fn new(topic_index: usize) -> Self {
        Self {
            topic_index,
            word_mean: BTreeMap::new(),
            word_var: BTreeMap::new(),
            last_update_ts: 0.0,
            lifecycle: None,
        }
    }

    pub fn state(&self) -> Option<TopicState> {
        self.lifecycle.map(|l| l.state)
    }
}

/// Softmax over the topic's means, untracked words at `prior_mean`.
pub fn topic_word_distribution(topic: &DriftingTopic, vocab_size: usize, prior_mean: f64) -> Result<Vec<f64>> {
    if let Some((&w, _)) = topic.word_mean.range(vocab_size..).next() {
        return Err(CidtmError::Config(format!("tracked word {w} outside a vocabulary of {vocab_size}")));
    }
    let mut logits = vec![prior_mean; vocab_size];
    for (&w, &m) in &topic.word_mean {
        logits[w] = m;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CidtmConfig {
    pub hyper: HdpHyper,
    /// Brownian drift variance per day.
    pub drift_v_per_day: f64,
    /// Variance of every pseudo-observation.
    pub obs_var: f64,
    pub prior_mean: f64,
    /// Variance of a word the topic has never tracked.
    pub prior_var: f64,
    /// Seconds a topic stays Active without relevant documents.
    pub active_timer_len: f64,
    pub relevance_threshold: f64,
}

impl Default for CidtmConfig {
    fn default() -> Self {
        Self {
            hyper: HdpHyper { alpha0: 0.2, ..HdpHyper::default() },
            drift_v_per_day: 0.005,
            obs_var: 0.1,
            prior_mean: 0.0,
            prior_var: 1.0,
            active_timer_len: 90.0 * DAY,
            relevance_threshold: 0.05,
        }
    }
}

impl CidtmConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(CidtmError::Config(format!("{name} must be > 0, got {x}")))
            }
        };
        pos("drift_v_per_day", self.drift_v_per_day)?;
        pos("obs_var", self.obs_var)?;
        pos("prior_var", self.prior_var)?;
        pos("active_timer_len", self.active_timer_len)?;
        if !self.prior_mean.is_finite() {
            return Err(CidtmError::Config("prior_mean must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.relevance_threshold) {
            return Err(CidtmError::Config(format!(
                "relevance_threshold must be in [0, 1], got {}",
                self.relevance_threshold
            )));
        }
        Ok(())
    }

    /// Drift variance per second.
    pub fn drift_v(&self) -> f64 {
        self.drift_v_per_day / DAY
    }

    fn drift(&self) -> Result<DriftConfig> {
        Ok(DriftConfig::new(self.drift_v(), self.prior_mean, self.prior_var)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CidtmBatchResult {
    pub per_doc: Vec<DocScore>,
    /// Document topic mixtures, in batch order.
    pub mixtures: Vec<Vec<f64>>,
    pub topics_born: BTreeSet<usize>,
    pub topics_died: BTreeSet<usize>,
    pub elbo_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CidtmModel {
    pub config: CidtmConfig,
    pub hdp: GlobalVariational,
    pub topics: Vec<DriftingTopic>,
    /// Timestamp of the last processed document.
    pub clock: Option<f64>,
}

fn check_order(docs: &[Document], clock: Option<f64>) -> Result<()> {
    if let (Some(c), Some(d)) = (clock, docs.first()) {
        if d.timestamp < c {
            return Err(CidtmError::Ordering { index: 0, prev: c, next: d.timestamp });
        }
    }
    for (i, w) in docs.windows(2).enumerate() {
        if !(w[1].timestamp >= w[0].timestamp) {
            return Err(CidtmError::Ordering { index: i + 1, prev: w[0].timestamp, next: w[1].timestamp });
        }
    }
    Ok(())
}

impl CidtmModel {
    pub fn new<R: Rng + ?Sized>(config: CidtmConfig, vocab_size: usize, corpus_size: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let hdp = GlobalVariational::init(&config.hyper, vocab_size, corpus_size, rng)?;
        Self::from_global(config, hdp)
    }

    pub fn from_global(config: CidtmConfig, hdp: GlobalVariational) -> Result<Self> {
        config.validate()?;
        if hdp.k_corpus != config.hyper.k_corpus {
            return Err(CidtmError::Config("global state and hyperparameters disagree on K_corpus".into()));
        }
        let topics = (0..hdp.k_corpus).map(DriftingTopic::new).collect();
        Ok(Self { config, hdp, topics, clock: None })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.hdp.validate()?;
        if self.topics.len() != self.hdp.k_corpus || self.topics.iter().enumerate().any(|(i, t)| t.topic_index != i) {
            return Err(CidtmError::Config("drifting topics are not aligned with the topic rows".into()));
        }
        for t in &self.topics {
            if t.word_var.values().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(CidtmError::Config(format!("topic {} has a non-positive variance", t.topic_index)));
            }
            if t.word_mean.keys().ne(t.word_var.keys()) {
                return Err(CidtmError::Config(format!("topic {} means and variances disagree", t.topic_index)));
            }
        }
        Ok(())
    }

    /// Inflates every tracked variance by the drift accumulated up to `to_ts`.
    pub fn evolve_topics(&mut self, to_ts: f64) -> Result<()> {
        if let Some(c) = self.clock {
            if to_ts < c {
                return Err(CidtmError::TimeRegression { clock: c, to: to_ts });
            }
        }
        let v = self.config.drift_v();
        let fresh = self.clock.is_none();
        for t in &mut self.topics {
            if !fresh {
                let dv = v * (to_ts - t.last_update_ts);
                if dv > 0.0 {
                    t.word_var.values_mut().for_each(|x| *x += dv);
                }
            }
            t.last_update_ts = to_ts;
        }
        self.clock = Some(to_ts);
        Ok(())
    }

    /// Scores a batch against the current state without learning from it.
    pub fn score_batch(&self, docs: &[Document]) -> Result<CidtmBatchResult> {
        if docs.is_empty() {
            return Ok(CidtmBatchResult { elbo_monotone: true, ..Default::default() });
        }
        check_order(docs, self.clock)?;
        let (_, results, per_doc) = infer_batch(docs, &self.hdp, &self.config.hyper)?;
        Ok(CidtmBatchResult {
            per_doc,
            mixtures: results.iter().map(|r| r.variational.topic_mixture()).collect(),
            elbo_monotone: results.iter().all(|r| elbo_is_monotone(&r.elbo_trace)),
            ..Default::default()
        })
    }

    /// Scores, learns from and commits one timestamp-ordered batch.
    pub fn process_batch(&mut self, docs: &[Document], corpus_size: usize) -> Result<CidtmBatchResult> {
        if docs.is_empty() {
            return Ok(CidtmBatchResult { elbo_monotone: true, ..Default::default() });
        }
        if corpus_size == 0 {
            return Err(CidtmError::Config("corpus size must be >= 1".into()));
        }
        check_order(docs, self.clock)?;
        let h = self.config.hyper;
        let (_, results, per_doc) = infer_batch(docs, &self.hdp, &h)?;
        let mixtures: Vec<Vec<f64>> = results.iter().map(|r| r.variational.topic_mixture()).collect();

        let mut stats = BatchStats::new(h.k_corpus);
        for r in &results {
            stats.merge(&r.stats);
        }
        let updated = online_update(&self.hdp, &stats, &h, corpus_size)?;

        let first = docs[0].timestamp;
        let last = docs[docs.len() - 1].timestamp;
        let mut next = self.clone();
        next.hdp = updated;
        next.evolve_topics(first)?;
        let priors: Vec<BTreeMap<usize, f64>> = next.topics.iter().map(|t| t.word_var.clone()).collect();
        next.evolve_topics(last)?;
        next.drift_batch(docs, &results, &mixtures, &priors, corpus_size)?;
        let (born, died) = next.advance_lifecycles(docs, &mixtures)?;
        next.validate()?;
        *self = next;

        Ok(CidtmBatchResult {
            per_doc,
            mixtures,
            topics_born: born,
            topics_died: died,
            elbo_monotone: results.iter().all(|r| elbo_is_monotone(&r.elbo_trace)),
        })
    }

    /// Kalman stage: tracks over the batch steps for every (topic, word)
    /// observed in a relevant document, then write-back into the topic rows.
    fn drift_batch(
        &mut self,
        docs: &[Document],
        results: &[DocResult],
        mixtures: &[Vec<f64>],
        prior_var: &[BTreeMap<usize, f64>],
        corpus_size: usize,
    ) -> Result<()> {
        let cfg = self.config;
        let drift = cfg.drift()?;
        let eta = cfg.hyper.eta;
        let v = self.hdp.vocab_size;
        let scale = corpus_size as f64 / docs.len() as f64;

        let mut steps: Vec<f64> = Vec::new();
        let mut step_of_doc = Vec::with_capacity(docs.len());
        for d in docs {
            if steps.last() != Some(&d.timestamp) {
                steps.push(d.timestamp);
            }
            step_of_doc.push(steps.len() - 1);
        }

        struct TopicObs {
            counts: BTreeMap<usize, f64>,
            present: BTreeMap<usize, Vec<bool>>,
        }
        let mut obs: BTreeMap<usize, TopicObs> = BTreeMap::new();
        for (i, (d, r)) in docs.iter().zip(results).enumerate() {
            for (k, &theta) in mixtures[i].iter().enumerate() {
                if theta < cfg.relevance_threshold {
                    continue;
                }
                let o = obs.entry(k).or_insert_with(|| TopicObs { counts: BTreeMap::new(), present: BTreeMap::new() });
                for &(w, _) in &d.counts {
                    *o.counts.entry(w).or_insert(0.0) += r.stats.word_topic(k, w);
                    o.present.entry(w).or_insert_with(|| vec![false; steps.len()])[step_of_doc[i]] = true;
                }
            }
        }

        let mut jobs = Vec::new();
        for (&k, o) in &obs {
            let row = self.hdp.row(k);
            let total: f64 = row.iter().sum();
            let n_k: f64 = o.counts.values().sum();
            let denom = (eta * v as f64 + scale * n_k).ln();
            for (&w, present) in &o.present {
                let beta = (eta + scale * o.counts[&w]).ln() - denom;
                let m0 = (row[w] / total).ln();
                let v0 = prior_var[k].get(&w).copied().unwrap_or(cfg.prior_var);
                jobs.push((k, w, present.clone(), beta, drift.with_prior(m0, v0)));
            }
        }
        let smoothed: Vec<(usize, usize, f64, f64)> = jobs
            .into_par_iter()
            .map(|(k, w, present, beta, dc)| {
                let track = ObservationTrack::new(steps.clone(), vec![beta; steps.len()], cfg.obs_var, present)?;
                let post = smooth_track(&track, &dc)?;
                let n = steps.len() - 1;
                Ok((k, w, post.smoothed_mean[n], post.smoothed_var[n]))
            })
            .collect::<Result<_>>()?;

        let mut by_topic: BTreeMap<usize, Vec<(usize, f64, f64)>> = BTreeMap::new();
        for (k, w, m, var) in smoothed {
            by_topic.entry(k).or_default().push((w, m, var));
        }
        for (k, tracked) in by_topic {
            let row = self.hdp.row_mut(k);
            let total: f64 = row.iter().sum();
            let mut p: Vec<f64> = row.iter().map(|x| x / total).collect();
            for &(w, m, _) in &tracked {
                p[w] = m.exp();
            }
            let z: f64 = p.iter().sum();
            for (x, pw) in row.iter_mut().zip(&p) {
                *x = total * pw / z;
            }
            let topic = &mut self.topics[k];
            for &(w, _, var) in &tracked {
                topic.word_var.insert(w, var);
            }
            let keys: Vec<usize> = topic.word_var.keys().copied().collect();
            for w in keys {
                topic.word_mean.insert(w, (p[w] / z).ln());
            }
        }
        Ok(())
    }

    fn advance_lifecycles(&mut self, docs: &[Document], mixtures: &[Vec<f64>]) -> Result<(BTreeSet<usize>, BTreeSet<usize>)> {
        let thr = self.config.relevance_threshold;
        let timer = self.config.active_timer_len;
        let mut born = BTreeSet::new();
        let mut died = BTreeSet::new();
        for (k, topic) in self.topics.iter_mut().enumerate() {
            let before = topic.state();
            let mut lc = topic.lifecycle;
            for (d, mix) in docs.iter().zip(mixtures) {
                let ts = d.timestamp;
                let event = match (lc.is_some(), mix[k] >= thr) {
                    (false, true) => LifecycleEvent::TopicBorn(ts),
                    (false, false) => continue,
                    (true, true) => LifecycleEvent::RelevantDoc(ts),
                    (true, false) => LifecycleEvent::IrrelevantDoc(ts),
                };
                lc = Some(lifecycle_step(lc, event, timer)?);
            }
            topic.lifecycle = lc;
            match (before, topic.state()) {
                (None, Some(_)) => {
                    born.insert(k);
                }
                (Some(TopicState::Active), Some(TopicState::Dead)) => {
                    died.insert(k);
                }
                _ => {}
            }
        }
        Ok((born, died))
    }

    /// Topic indices currently in the given state.
    pub fn topics_in(&self, state: TopicState) -> Vec<usize> {
        self.topics.iter().filter(|t| t.state() == Some(state)).map(|t| t.topic_index).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ohdp::OnlineHdp;
    use crate::synth::linear_drift_corpus;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(k: usize) -> CidtmConfig {
        CidtmConfig { hyper: HdpHyper { k_corpus: k, t_doc: 5, ..HdpHyper::default() }, ..CidtmConfig::default() }
    }

    #[test]
    fn lifecycle_examples() {
        let born = lifecycle_step(None, LifecycleEvent::TopicBorn(0.0), 100.0).unwrap();
        let lc = lifecycle_step(Some(born), LifecycleEvent::RelevantDoc(10.0), 100.0).unwrap();
        assert_eq!((lc.state, lc.timer_deadline), (TopicState::Active, 110.0));
        let dead = lifecycle_step(Some(born), LifecycleEvent::IrrelevantDoc(150.0), 100.0).unwrap();
        assert_eq!(dead.state, TopicState::Dead);
        let back = lifecycle_step(Some(dead), LifecycleEvent::RelevantDoc(200.0), 100.0).unwrap();
        assert_eq!((back.state, back.timer_deadline), (TopicState::Active, 300.0));
        let still = lifecycle_step(Some(dead), LifecycleEvent::IrrelevantDoc(400.0), 100.0).unwrap();
        assert_eq!(still.state, TopicState::Dead);
        // on the deadline itself the timer has not expired
        let edge = lifecycle_step(Some(born), LifecycleEvent::IrrelevantDoc(100.0), 100.0).unwrap();
        assert_eq!(edge.state, TopicState::Active);
    }

    #[test]
    fn lifecycle_protocol_errors() {
        assert!(lifecycle_step(None, LifecycleEvent::RelevantDoc(1.0), 10.0).is_err());
        assert!(lifecycle_step(None, LifecycleEvent::IrrelevantDoc(1.0), 10.0).is_err());
        let born = lifecycle_step(None, LifecycleEvent::TopicBorn(5.0), 10.0).unwrap();
        assert!(lifecycle_step(Some(born), LifecycleEvent::TopicBorn(6.0), 10.0).is_err());
        assert!(lifecycle_step(Some(born), LifecycleEvent::RelevantDoc(4.0), 10.0).is_err());
    }

    #[test]
    fn evolve_inflates_variances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = CidtmConfig { drift_v_per_day: 0.01 * DAY, ..small_config(3) };
        let mut m = CidtmModel::new(cfg, 10, 100, &mut rng).unwrap();
        m.evolve_topics(5.0).unwrap();
        m.topics[1].word_mean.insert(3, -1.5);
        m.topics[1].word_var.insert(3, 0.2);
        let before = m.clone();
        m.evolve_topics(5.0).unwrap();
        assert_eq!(m, before);
        m.evolve_topics(15.0).unwrap();
        assert_abs_diff_eq!(m.topics[1].word_var[&3], 0.3, epsilon = 1e-12);
        assert_eq!(m.topics[1].word_mean, before.topics[1].word_mean);
        assert!(matches!(m.evolve_topics(14.0), Err(CidtmError::TimeRegression { .. })));
    }

    #[test]
    fn word_distribution_examples() {
        let mut t = DriftingTopic::new(0);
        let p = topic_word_distribution(&t, 4, 0.0).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        t.word_mean.insert(7, 20.0);
        t.word_var.insert(7, 1.0);
        let p = topic_word_distribution(&t, 1000, 0.0).unwrap();
        assert!(p[7] > 0.999);
        let mut shifted = t.clone();
        shifted.word_mean.insert(7, 23.0);
        let q = topic_word_distribution(&shifted, 1000, 3.0).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(topic_word_distribution(&t, 5, 0.0).is_err());
    }

    #[test]
    fn ordering_and_empty_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = linear_drift_corpus(20, 30, 2);
        let mut m = CidtmModel::new(small_config(4), 30, 20, &mut rng).unwrap();
        let r = m.process_batch(&[], 20).unwrap();
        assert!(r.per_doc.is_empty() && m.clock.is_none());
        let mut docs = c.docs[..4].to_vec();
        docs.swap(0, 1);
        assert!(matches!(m.process_batch(&docs, 20), Err(CidtmError::Ordering { index: 1, .. })));
        m.process_batch(&c.docs[5..10], 20).unwrap();
        assert!(matches!(m.process_batch(&c.docs[0..3], 20), Err(CidtmError::Ordering { index: 0, .. })));
        assert_eq!(m.clock, Some(c.docs[9].timestamp));
    }

    #[test]
    fn scoring_precedes_learning() {
        let c = linear_drift_corpus(60, 30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = CidtmModel::new(small_config(5), 30, 60, &mut rng).unwrap();
        for b in c.docs.chunks(10) {
            let frozen = m.score_batch(b).unwrap();
            let r = m.process_batch(b, 60).unwrap();
            assert_eq!(frozen.per_doc, r.per_doc);
            assert!(r.topics_born.is_disjoint(&r.topics_died));
            assert!(r.topics_born.iter().chain(&r.topics_died).all(|&k| k < 5));
        }
    }

    #[test]
    fn deterministic_runs() {
        let c = linear_drift_corpus(60, 30, 4);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut m = CidtmModel::new(small_config(6), 30, 60, &mut rng).unwrap();
            let out: Vec<CidtmBatchResult> = c.docs.chunks(7).map(|b| m.process_batch(b, 60).unwrap()).collect();
            (out, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        for (x, y) in a.iter().flat_map(|r| &r.per_doc).zip(b.iter().flat_map(|r| &r.per_doc)) {
            assert_eq!(x.loglik.to_bits(), y.loglik.to_bits());
        }
    }

    #[test]
    fn inert_drift_reduces_to_ohdp() {
        let c = linear_drift_corpus(80, 30, 5);
        let cfg = CidtmConfig { drift_v_per_day: 1e-12, obs_var: 1e12, ..small_config(6) };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = CidtmModel::new(cfg, 30, 80, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut o = OnlineHdp::new(cfg.hyper, 30, 80, &mut rng).unwrap();
        for b in c.docs.chunks(8) {
            let r = m.process_batch(b, 80).unwrap();
            let s = o.process_batch(b).unwrap();
            for (x, y) in r.per_doc.iter().zip(&s.scores) {
                assert_abs_diff_eq!(x.loglik, y.loglik, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn equal_timestamps_make_one_step() {
        let mut c = linear_drift_corpus(12, 30, 6);
        for d in &mut c.docs {
            d.timestamp = 1000.0;
        }
        let cfg = small_config(4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = CidtmModel::new(cfg, 30, 12, &mut rng).unwrap();
        m.process_batch(&c.docs, 12).unwrap();
        // one observation on a fresh track: posterior variance V0 vhat / (V0 + vhat)
        let want = cfg.prior_var * cfg.obs_var / (cfg.prior_var + cfg.obs_var);
        let tracked: Vec<f64> = m.topics.iter().flat_map(|t| t.word_var.values().copied()).collect();
        assert!(!tracked.is_empty());
        for v in tracked {
            assert_abs_diff_eq!(v, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn silent_topic_dies_after_timer() {
        let c = linear_drift_corpus(20, 30, 7);
        // no mixture weight reaches 1, so every document is irrelevant
        let cfg = CidtmConfig { active_timer_len: 1.0, relevance_threshold: 1.0, ..small_config(4) };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = CidtmModel::new(cfg, 30, 20, &mut rng).unwrap();
        m.topics[2].lifecycle = Some(TopicLifecycle { state: TopicState::Active, timer_deadline: -1.0, last_event: -2.0 });
        let r = m.process_batch(&c.docs[..10], 20).unwrap();
        assert_eq!(r.topics_died, BTreeSet::from([2]));
        assert!(r.topics_born.is_empty());
        assert_eq!(m.topics_in(TopicState::Dead), vec![2]);
        assert!(m.topics.iter().all(|t| t.word_var.is_empty()));
    }
}
