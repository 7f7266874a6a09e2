//! Factorized (mean-field) variational inference for a univariate Gaussian
//! with unknown mean and precision under a Gaussian-Gamma prior.
//!
//! The posterior is approximated as `q(mu, tau) = q(mu) q(tau)` with
//! `q(mu) = N(mu_n, 1/lambda_n)` and `q(tau) = Gamma(a_n, b_n)`. The two
//! factors are updated in turn until the parameters stop moving.
//!
//! The shape update `a_n = a0 + N/2` is the exact coordinate step for the
//! joint measure
//!
//! ```text
//! prod_n N(x_n | mu, 1/tau) * N(mu | mu0, 1/(lambda0 tau)) * Gamma(tau | a0, b0) * tau^(-1/2)
//! ```
//!
//! (the `tau^(1/2)` carried by the conditional prior on the mean is cancelled).
//! The bound below is computed against that measure, so every full cycle of
//! updates leaves it non-decreasing.

use std::f64::consts::PI;

use thiserror::Error;

use crate::prob::{digamma, ln_gamma};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanFieldError {
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no convergence after {} iterations", last.iterations)]
    NotConverged { last: Box<GaussianGammaPosterior> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianGammaPrior {
    pub mu0: f64,
    /// Scales the prior precision of the mean; zero gives a flat prior on the mean.
    pub lambda0: f64,
    pub a0: f64,
    pub b0: f64,
}

impl GaussianGammaPrior {
    pub fn new(mu0: f64, lambda0: f64, a0: f64, b0: f64) -> Result<Self, MeanFieldError> {
        let p = Self { mu0, lambda0, a0, b0 };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), MeanFieldError> {
        if !self.mu0.is_finite() {
            return Err(MeanFieldError::Prior("mu0 must be finite".into()));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(MeanFieldError::Prior(format!("lambda0 must be >= 0, got {}", self.lambda0)));
        }
        if !(self.a0 > 0.0 && self.a0.is_finite()) || !(self.b0 > 0.0 && self.b0.is_finite()) {
            return Err(MeanFieldError::Prior(format!(
                "a0 and b0 must be > 0, got ({}, {})",
                self.a0, self.b0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGammaPosterior {
    pub mu_n: f64,
    pub lambda_n: f64,
    pub a_n: f64,
    pub b_n: f64,
    /// Lower bound after each full coordinate-ascent iteration.
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
}

impl GaussianGammaPosterior {
    pub fn expected_precision(&self) -> f64 {
        self.a_n / self.b_n
    }
}

struct Suff {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Suff {
    fn new(data: &[f64]) -> Self {
        Self {
            n: data.len() as f64,
            sum: data.iter().sum(),
            sum_sq: data.iter().map(|x| x * x).sum(),
        }
    }
}

fn check_data(data: &[f64]) -> Result<(), MeanFieldError> {
    if data.is_empty() {
        return Err(MeanFieldError::Input("data must be non-empty".into()));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(MeanFieldError::Input("data must be finite".into()));
    }
    Ok(())
}

/// Fits the factorized posterior starting from `E[tau] = a0 / b0`.
pub fn gaussian_meanfield_fit(
    data: &[f64],
    prior: &GaussianGammaPrior,
    tol: f64,
    max_iter: usize,
) -> Result<GaussianGammaPosterior, MeanFieldError> {
    gaussian_meanfield_fit_from(data, prior, prior.a0 / prior.b0, tol, max_iter)
}

/// Same as [`gaussian_meanfield_fit`] with an explicit initial `E[tau]`.
pub fn gaussian_meanfield_fit_from(
    data: &[f64],
    prior: &GaussianGammaPrior,
    init_expected_precision: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GaussianGammaPosterior, MeanFieldError> {
    prior.validate()?;
    check_data(data)?;
    if !(tol > 0.0) {
        return Err(MeanFieldError::Input("tol must be > 0".into()));
    }
    if !(init_expected_precision > 0.0 && init_expected_precision.is_finite()) {
        return Err(MeanFieldError::Input("initial E[tau] must be > 0".into()));
    }
    let s = Suff::new(data);
    let GaussianGammaPrior { mu0, lambda0, a0, b0 } = *prior;

    // q(mu) only depends on E[tau] through lambda_n; the mean is fixed.
    let mu_n = (lambda0 * mu0 + s.sum) / (lambda0 + s.n);
    let a_n = a0 + s.n / 2.0;

    let mut e_tau = init_expected_precision;
    let mut post = GaussianGammaPosterior {
        mu_n,
        lambda_n: f64::NAN,
        a_n,
        b_n: f64::NAN,
        elbo_trace: Vec::new(),
        iterations: 0,
    };
    for it in 1..=max_iter {
        let lambda_n = (lambda0 + s.n) * e_tau;
        let e_mu = mu_n;
        let e_mu2 = mu_n * mu_n + 1.0 / lambda_n;
        let data_sq = s.sum_sq - 2.0 * e_mu * s.sum + s.n * e_mu2;
        let prior_sq = lambda0 * (e_mu2 - 2.0 * mu0 * e_mu + mu0 * mu0);
        let b_n = b0 + 0.5 * (data_sq + prior_sq);

        let prev = (post.mu_n, post.lambda_n, post.a_n, post.b_n);
        post.lambda_n = lambda_n;
        post.b_n = b_n;
        post.iterations = it;
        post.elbo_trace.push(elbo_from_suff(&s, prior, &post));
        e_tau = a_n / b_n;

        let rel = |new: f64, old: f64| ((new - old) / new.abs().max(f64::MIN_POSITIVE)).abs();
        if it > 1
            && rel(post.mu_n, prev.0) < tol
            && rel(post.lambda_n, prev.1) < tol
            && rel(post.a_n, prev.2) < tol
            && rel(post.b_n, prev.3) < tol
        {
            return Ok(post);
        }
    }
    Err(MeanFieldError::NotConverged { last: Box::new(post) })
}

fn elbo_from_suff(s: &Suff, prior: &GaussianGammaPrior, q: &GaussianGammaPosterior) -> f64 {
    let GaussianGammaPrior { mu0, lambda0, a0, b0 } = *prior;
    let e_tau = q.a_n / q.b_n;
    let e_ln_tau = digamma(q.a_n) - q.b_n.ln();
    let e_mu = q.mu_n;
    let e_mu2 = q.mu_n * q.mu_n + 1.0 / q.lambda_n;
    let ln2pi = (2.0 * PI).ln();

    let data_sq = s.sum_sq - 2.0 * e_mu * s.sum + s.n * e_mu2;
    let mut l = 0.5 * s.n * (e_ln_tau - ln2pi) - 0.5 * e_tau * data_sq;
    if lambda0 > 0.0 {
        let prior_sq = e_mu2 - 2.0 * mu0 * e_mu + mu0 * mu0;
        l += 0.5 * (lambda0.ln() - ln2pi) - 0.5 * lambda0 * e_tau * prior_sq;
    }
    l += a0 * b0.ln() - ln_gamma(a0) + (a0 - 1.0) * e_ln_tau - b0 * e_tau;
    // entropies of q(mu) and q(tau)
    l += 0.5 * (1.0 + ln2pi - q.lambda_n.ln());
    l += q.a_n - q.b_n.ln() + ln_gamma(q.a_n) + (1.0 - q.a_n) * digamma(q.a_n);
    l
}

/// Evidence lower bound in nats. With `lambda0 == 0` the prior on the mean is
/// the improper flat density and contributes nothing.
pub fn meanfield_elbo(
    data: &[f64],
    prior: &GaussianGammaPrior,
    posterior: &GaussianGammaPosterior,
) -> Result<f64, MeanFieldError> {
    prior.validate()?;
    check_data(data)?;
    let ok = |x: f64| x > 0.0 && x.is_finite();
    if !(ok(posterior.lambda_n) && ok(posterior.a_n) && ok(posterior.b_n) && posterior.mu_n.is_finite()) {
        return Err(MeanFieldError::Input("posterior parameters must be positive and finite".into()));
    }
    Ok(elbo_from_suff(&Suff::new(data), prior, posterior))
}
