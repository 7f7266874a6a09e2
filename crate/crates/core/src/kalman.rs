//! Scalar Kalman filtering and smoothing for per-(topic, word) drift tracks.
//!
//! Each track follows a Brownian motion `beta_t ~ N(beta_{t-1}, v * dt)` and
//! is observed through pseudo-observations `beta_hat_t ~ N(beta_t, vhat_t)`.
//! Steps where the word was not observed only propagate the state forward.
//!
//! The prior `N(m0, V0)` applies at the first timestamp of the track.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::log_sum_exp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("timestamps must be strictly increasing (step {step}: {prev} -> {next})")]
    Ordering { step: usize, prev: f64, next: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid observation at step {step}: {msg}")]
    Observation { step: usize, msg: String },
}

type Result<T> = std::result::Result<T, KalmanError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationTrack {
    pub timestamps: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub obs_variance: Vec<f64>,
    pub present: Vec<bool>,
}

impl ObservationTrack {
    /// Track with the same observation variance at every step.
    pub fn new(timestamps: Vec<f64>, beta_hat: Vec<f64>, obs_variance: f64, present: Vec<bool>) -> Result<Self> {
        let n = timestamps.len();
        let t = Self {
            timestamps,
            beta_hat,
            obs_variance: vec![obs_variance; n],
            present,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if n == 0 {
            return Err(KalmanError::Shape("track is empty".into()));
        }
        if self.beta_hat.len() != n || self.obs_variance.len() != n || self.present.len() != n {
            return Err(KalmanError::Shape(format!(
                "track fields have lengths {}, {}, {}, {}",
                n,
                self.beta_hat.len(),
                self.obs_variance.len(),
                self.present.len()
            )));
        }
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(KalmanError::Ordering { step: i + 1, prev: w[0], next: w[1] });
            }
        }
        for step in 0..n {
            if !self.timestamps[step].is_finite() {
                return Err(KalmanError::Observation { step, msg: "timestamp is not finite".into() });
            }
            if !(self.obs_variance[step] > 0.0) {
                return Err(KalmanError::Observation { step, msg: "observation variance must be > 0".into() });
            }
            if self.present[step] && !self.beta_hat[step].is_finite() {
                return Err(KalmanError::Observation { step, msg: "observation is not finite".into() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    /// Variance added per second of elapsed time.
    pub process_variance: f64,
    pub prior_mean: f64,
    pub prior_variance: f64,
}

impl DriftConfig {
    pub fn new(process_variance: f64, prior_mean: f64, prior_variance: f64) -> Result<Self> {
        let c = Self { process_variance, prior_mean, prior_variance };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.process_variance > 0.0 && self.process_variance.is_finite()) {
            return Err(KalmanError::Config(format!("process variance must be > 0, got {}", self.process_variance)));
        }
        if !self.prior_mean.is_finite() {
            return Err(KalmanError::Config("prior mean must be finite".into()));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(KalmanError::Config(format!("prior variance must be > 0, got {}", self.prior_variance)));
        }
        Ok(())
    }

    /// Same drift, different prior.
    pub fn with_prior(&self, mean: f64, variance: f64) -> Self {
        Self { prior_mean: mean, prior_variance: variance, ..*self }
    }
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { process_variance: 1e-3, prior_mean: 0.0, prior_variance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanPosterior {
    pub forward_mean: Vec<f64>,
    pub forward_var: Vec<f64>,
    pub smoothed_mean: Vec<f64>,
    pub smoothed_var: Vec<f64>,
}

/// Per-step word counts. Counts may be fractional (expected counts).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordCounts {
    counts: Vec<BTreeMap<usize, f64>>,
    totals: Vec<f64>,
}

impl WordCounts {
    pub fn new(steps: usize) -> Self {
        Self { counts: vec![BTreeMap::new(); steps], totals: vec![0.0; steps] }
    }

    pub fn add(&mut self, step: usize, word: usize, count: f64) {
        *self.counts[step].entry(word).or_insert(0.0) += count;
        self.totals[step] += count;
    }

    pub fn steps(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, step: usize, word: usize) -> f64 {
        self.counts[step].get(&word).copied().unwrap_or(0.0)
    }

    pub fn step_counts(&self, step: usize) -> &BTreeMap<usize, f64> {
        &self.counts[step]
    }

    pub fn total(&self, step: usize) -> f64 {
        self.totals[step]
    }
}

fn gaps(ts: &[f64]) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(0.0).chain(ts.windows(2).map(|w| w[1] - w[0]))
}

/// Forward filter. Returns the filtered means and variances.
pub fn kalman_forward(track: &ObservationTrack, cfg: &DriftConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    track.validate()?;
    cfg.validate()?;
    let n = track.len();
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    let (mut m, mut v) = (cfg.prior_mean, cfg.prior_variance);
    for (t, dt) in gaps(&track.timestamps).enumerate() {
        let p = v + cfg.process_variance * dt;
        if track.present[t] {
            let g = track.obs_variance[t] / (p + track.obs_variance[t]);
            m = g * m + (1.0 - g) * track.beta_hat[t];
            v = g * p;
        } else {
            v = p;
        }
        means.push(m);
        vars.push(v);
    }
    Ok((means, vars))
}

/// Backward smoother over the output of [`kalman_forward`].
pub fn kalman_backward(
    track: &ObservationTrack,
    forward: (&[f64], &[f64]),
    cfg: &DriftConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    track.validate()?;
    cfg.validate()?;
    let (fm, fv) = forward;
    let n = track.len();
    if fm.len() != n || fv.len() != n {
        return Err(KalmanError::Shape(format!(
            "forward pass has lengths ({}, {}) but track has {} steps",
            fm.len(),
            fv.len(),
            n
        )));
    }
    let mut sm = fm.to_vec();
    let mut sv = fv.to_vec();
    for t in (1..n).rev() {
        let q = cfg.process_variance * (track.timestamps[t] - track.timestamps[t - 1]);
        let p = fv[t - 1] + q;
        let w = q / p;
        sm[t - 1] = w * fm[t - 1] + (1.0 - w) * sm[t];
        let r = fv[t - 1] / p;
        sv[t - 1] = fv[t - 1] + r * r * (sv[t] - p);
    }
    Ok((sm, sv))
}

pub fn smooth_track(track: &ObservationTrack, cfg: &DriftConfig) -> Result<KalmanPosterior> {
    let (forward_mean, forward_var) = kalman_forward(track, cfg)?;
    let (smoothed_mean, smoothed_var) = kalman_backward(track, (&forward_mean, &forward_var), cfg)?;
    Ok(KalmanPosterior { forward_mean, forward_var, smoothed_mean, smoothed_var })
}

/// Smooths many independent tracks in parallel, each with its own config.
pub fn smooth_tracks<K>(tracks: &[(K, ObservationTrack, DriftConfig)]) -> Result<Vec<(K, KalmanPosterior)>>
where
    K: Clone + Send + Sync,
{
    tracks
        .par_iter()
        .map(|(k, tr, cfg)| smooth_track(tr, cfg).map(|p| (k.clone(), p)))
        .collect()
}

fn gaussian_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

/// Lower bound on the log-likelihood of the counts under the drifting
/// softmax model, in nats.
///
/// All tracks must share the same timestamps, one per step of `counts`.
/// Words of the vocabulary without a track carry the prior propagated
/// forward in time. Posterior variances may be zero.
pub fn kalman_lower_bound(
    vocab_size: usize,
    timestamps: &[f64],
    tracks: &BTreeMap<usize, ObservationTrack>,
    posteriors: &BTreeMap<usize, KalmanPosterior>,
    counts: &WordCounts,
    cfg: &DriftConfig,
) -> Result<f64> {
    cfg.validate()?;
    let steps = timestamps.len();
    if counts.steps() != steps {
        return Err(KalmanError::Shape(format!("{} count steps for {} timestamps", counts.steps(), steps)));
    }
    if tracks.len() > vocab_size || tracks.keys().any(|&w| w >= vocab_size) {
        return Err(KalmanError::Shape("track word id outside the vocabulary".into()));
    }
    for (w, tr) in tracks {
        tr.validate()?;
        if tr.timestamps != timestamps {
            return Err(KalmanError::Shape(format!("track for word {w} has different timestamps")));
        }
        let post = posteriors
            .get(w)
            .ok_or_else(|| KalmanError::Shape(format!("missing posterior for word {w}")))?;
        if [&post.forward_mean, &post.forward_var, &post.smoothed_mean, &post.smoothed_var]
            .iter()
            .any(|v| v.len() != steps)
        {
            return Err(KalmanError::Shape(format!("posterior for word {w} has wrong length")));
        }
    }
    for t in 0..steps {
        if let Some((&w, _)) = counts.step_counts(t).iter().find(|(w, c)| **c != 0.0 && !tracks.contains_key(w)) {
            return Err(KalmanError::Shape(format!("word {w} observed at step {t} has no track")));
        }
    }

    let untracked = (vocab_size - tracks.len()) as f64;
    let mut bound = 0.0;
    let mut terms = Vec::with_capacity(tracks.len() + 1);
    for t in 0..steps {
        terms.clear();
        let mut linear = 0.0;
        for (w, post) in posteriors.iter().filter(|(w, _)| tracks.contains_key(w)) {
            linear += counts.count(t, *w) * post.smoothed_mean[t];
            terms.push(post.smoothed_mean[t] + post.smoothed_var[t] / 2.0);
        }
        if untracked > 0.0 {
            let var = cfg.prior_variance + cfg.process_variance * (timestamps[t] - timestamps[0]);
            terms.push(untracked.ln() + cfg.prior_mean + var / 2.0);
        }
        bound += linear - counts.total(t) * log_sum_exp(&terms);
    }

    for (w, tr) in tracks {
        let post = &posteriors[w];
        let (mut prev_m, mut prev_v) = (cfg.prior_mean, cfg.prior_variance);
        for (t, dt) in gaps(timestamps).enumerate() {
            let p = prev_v + cfg.process_variance * dt;
            if tr.present[t] {
                let vhat = tr.obs_variance[t];
                let d = tr.beta_hat[t] - post.smoothed_mean[t];
                let expected = -0.5 * (2.0 * PI * vhat).ln() - (d * d + post.smoothed_var[t]) / (2.0 * vhat);
                bound -= expected;
                bound += gaussian_ln_pdf(tr.beta_hat[t], prev_m, p + vhat);
            }
            prev_m = post.forward_mean[t];
            prev_v = post.forward_var[t];
        }
    }
    Ok(bound)
}
