//! Probability distributions, samplers and discrete information measures.
//!
//! Densities are reported in nats. The information-theoretic functions
//! (`entropy`, `kl_divergence`, `mutual_information`, ...) report bits.

use rand::Rng;
use rand_distr::Distribution as _;
use thiserror::Error;

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Tolerance used when checking that a probability vector sums to one.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Tolerance used for joint probability tables, which accumulate more rounding.
pub const JOINT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("point outside support: {0}")]
    OutOfSupport(String),
}

type Result<T> = std::result::Result<T, ProbError>;

fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ProbError::Parameter(msg.into()))
}

/// A parametric distribution from the families used throughout the crate.
///
/// The categorical distribution is `Multinomial` with `n_trials == 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform { a: f64, b: f64 },
    Bernoulli { mu: f64 },
    Binomial { n_trials: u64, mu: f64 },
    Multinomial { n_trials: u64, mu: Vec<f64> },
    Beta { a: f64, b: f64 },
    Dirichlet { alpha: Vec<f64> },
    Gaussian { mean: f64, variance: f64 },
    /// Shape/rate parameterization.
    Gamma { shape: f64, rate: f64 },
}

/// A point in the sample space of a [`Distribution`].
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Real(f64),
    Vector(Vec<f64>),
}

impl Point {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Point::Real(x) => Some(*x),
            Point::Vector(_) => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Point::Real(_) => None,
            Point::Vector(v) => Some(v),
        }
    }
}

fn check_probability(mu: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return param_err(format!("probability {mu} not in [0, 1]"));
    }
    Ok(())
}

fn check_simplex(mu: &[f64], tol: f64) -> Result<()> {
    if mu.is_empty() {
        return param_err("empty probability vector");
    }
    if mu.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return param_err("probability vector has negative or non-finite entries");
    }
    let s: f64 = mu.iter().sum();
    if (s - 1.0).abs() > tol {
        return param_err(format!("probability vector sums to {s}, not 1"));
    }
    Ok(())
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return param_err(format!("{name} must be finite and > 0, got {x}"));
    }
    Ok(())
}

/// `a * ln(x)` with the convention `0 * ln 0 = 0`.
pub(crate) fn xlogx_coef(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * x.ln()
    }
}

fn as_count(x: f64) -> Option<u64> {
    if x >= 0.0 && x.fract() == 0.0 && x.is_finite() {
        Some(x as u64)
    } else {
        None
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            Distribution::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return param_err(format!("uniform requires a < b, got ({a}, {b})"));
                }
            }
            Distribution::Bernoulli { mu } | Distribution::Binomial { mu, .. } => {
                check_probability(*mu)?
            }
            Distribution::Multinomial { mu, .. } => check_simplex(mu, SIMPLEX_TOL)?,
            Distribution::Beta { a, b } => {
                check_positive("beta a", *a)?;
                check_positive("beta b", *b)?;
            }
            Distribution::Dirichlet { alpha } => {
                if alpha.len() < 2 {
                    return param_err("dirichlet needs at least two components");
                }
                for a in alpha {
                    check_positive("dirichlet concentration", *a)?;
                }
            }
            Distribution::Gaussian { mean, variance } => {
                if !mean.is_finite() {
                    return param_err("gaussian mean must be finite");
                }
                check_positive("gaussian variance", *variance)?;
            }
            Distribution::Gamma { shape, rate } => {
                check_positive("gamma shape", *shape)?;
                check_positive("gamma rate", *rate)?;
            }
        }
        Ok(())
    }

    /// Analytic mean of a scalar-valued distribution, or per-component mean
    /// of a vector-valued one.
    pub fn mean(&self) -> Point {
        match self {
            Distribution::Uniform { a, b } => Point::Real(0.5 * (a + b)),
            Distribution::Bernoulli { mu } => Point::Real(*mu),
            Distribution::Binomial { n_trials, mu } => Point::Real(*n_trials as f64 * mu),
            Distribution::Multinomial { n_trials, mu } => {
                Point::Vector(mu.iter().map(|p| *n_trials as f64 * p).collect())
            }
            Distribution::Beta { a, b } => Point::Real(a / (a + b)),
            Distribution::Dirichlet { alpha } => {
                let total: f64 = alpha.iter().sum();
                Point::Vector(alpha.iter().map(|a| a / total).collect())
            }
            Distribution::Gaussian { mean, .. } => Point::Real(*mean),
            Distribution::Gamma { shape, rate } => Point::Real(shape / rate),
        }
    }
}

/// Natural-log density (or mass) of `dist` at `x`.
pub fn log_density(dist: &Distribution, x: &Point) -> Result<f64> {
    dist.validate()?;
    let oos = |what: &str| Err(ProbError::OutOfSupport(what.to_string()));
    match dist {
        Distribution::Uniform { a, b } => match x.as_real() {
            Some(v) if v >= *a && v <= *b => Ok(-(b - a).ln()),
            _ => oos("uniform point outside [a, b]"),
        },
        Distribution::Bernoulli { mu } => match x.as_real() {
            Some(1.0) => Ok(mu.ln()),
            Some(0.0) => Ok((1.0 - mu).ln()),
            _ => oos("bernoulli point must be 0 or 1"),
        },
        Distribution::Binomial { n_trials, mu } => {
            let k = match x.as_real().and_then(as_count) {
                Some(k) if k <= *n_trials => k,
                _ => return oos("binomial point must be an integer in [0, n]"),
            };
            Ok(ln_choose(*n_trials, k)
                + xlogx_coef(k as f64, *mu)
                + xlogx_coef((n_trials - k) as f64, 1.0 - mu))
        }
        Distribution::Multinomial { n_trials, mu } => {
            let v = match x.as_vector() {
                Some(v) if v.len() == mu.len() => v,
                _ => return oos("multinomial point has the wrong dimension"),
            };
            let mut total = 0u64;
            let mut lp = ln_gamma(*n_trials as f64 + 1.0);
            for (xk, pk) in v.iter().zip(mu) {
                let c = match as_count(*xk) {
                    Some(c) => c,
                    None => return oos("multinomial counts must be non-negative integers"),
                };
                total += c;
                lp += xlogx_coef(c as f64, *pk) - ln_gamma(c as f64 + 1.0);
            }
            if total != *n_trials {
                return oos("multinomial counts must sum to n_trials");
            }
            Ok(lp)
        }
        Distribution::Beta { a, b } => match x.as_real() {
            Some(v) if (0.0..=1.0).contains(&v) => {
                Ok(xlogx_coef(a - 1.0, v) + xlogx_coef(b - 1.0, 1.0 - v) - ln_beta(*a, *b))
            }
            _ => oos("beta point outside [0, 1]"),
        },
        Distribution::Dirichlet { alpha } => {
            let v = match x.as_vector() {
                Some(v) if v.len() == alpha.len() => v,
                _ => return oos("dirichlet point has the wrong dimension"),
            };
            if check_simplex(v, 1e-9).is_err() {
                return oos("dirichlet point is not on the simplex");
            }
            let total: f64 = alpha.iter().sum();
            let mut lp = ln_gamma(total);
            for (a, xk) in alpha.iter().zip(v) {
                lp += xlogx_coef(a - 1.0, *xk) - ln_gamma(*a);
            }
            Ok(lp)
        }
        Distribution::Gaussian { mean, variance } => match x.as_real() {
            Some(v) if v.is_finite() => Ok(-0.5 * (2.0 * std::f64::consts::PI * variance).ln()
                - (v - mean).powi(2) / (2.0 * variance)),
            _ => oos("gaussian point must be finite"),
        },
        Distribution::Gamma { shape, rate } => match x.as_real() {
            Some(v) if v >= 0.0 && v.is_finite() => {
                Ok(shape * rate.ln() - ln_gamma(*shape) + xlogx_coef(shape - 1.0, v) - rate * v)
            }
            _ => oos("gamma point must be non-negative"),
        },
    }
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = rand_distr::Gamma::new(shape, 1.0 / rate)
        .map_err(|e| ProbError::Parameter(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Draws a Dirichlet vector by normalizing independent Gamma(alpha_k, 1) draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let mut draws = alpha
        .iter()
        .map(|a| gamma_draw(*a, 1.0, rng))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        // every gamma underflowed; fall back to the largest concentration
        let imax = alpha
            .iter()
            .enumerate()
            .fold(0, |best, (i, a)| if *a > alpha[best] { i } else { best });
        draws.iter_mut().for_each(|d| *d = 0.0);
        draws[imax] = 1.0;
        return Ok(draws);
    }
    draws.iter_mut().for_each(|d| *d /= total);
    Ok(draws)
}

/// Draws a multinomial count vector by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(n_trials: u64, mu: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; mu.len()];
    let mut remaining = n_trials;
    let mut mass_left = 1.0f64;
    for (k, p) in mu.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == mu.len() {
            counts[k] = remaining;
            break;
        }
        let q = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 0.0 };
        let b = rand_distr::Binomial::new(remaining, q)
            .map_err(|e| ProbError::Parameter(e.to_string()))?;
        let c = b.sample(rng);
        counts[k] = c;
        remaining -= c;
        mass_left -= p;
    }
    Ok(counts)
}

/// Draws `n` i.i.d. points from `dist`.
pub fn sample<R: Rng + ?Sized>(dist: &Distribution, rng: &mut R, n: usize) -> Result<Vec<Point>> {
    if n == 0 {
        return param_err("sample size must be at least 1");
    }
    dist.validate()?;
    let map = |e: rand_distr::uniform::Error| ProbError::Parameter(e.to_string());
    let mut out = Vec::with_capacity(n);
    match dist {
        Distribution::Uniform { a, b } => {
            let u = rand_distr::Uniform::new(*a, *b).map_err(map)?;
            out.extend((0..n).map(|_| Point::Real(u.sample(rng))));
        }
        Distribution::Bernoulli { mu } => {
            let d = rand_distr::Bernoulli::new(*mu).map_err(|e| ProbError::Parameter(e.to_string()))?;
            out.extend((0..n).map(|_| Point::Real(if d.sample(rng) { 1.0 } else { 0.0 })));
        }
        Distribution::Binomial { n_trials, mu } => {
            let d = rand_distr::Binomial::new(*n_trials, *mu)
                .map_err(|e| ProbError::Parameter(e.to_string()))?;
            out.extend((0..n).map(|_| Point::Real(d.sample(rng) as f64)));
        }
        Distribution::Multinomial { n_trials, mu } => {
            for _ in 0..n {
                let c = sample_multinomial(*n_trials, mu, rng)?;
                out.push(Point::Vector(c.into_iter().map(|c| c as f64).collect()));
            }
        }
        Distribution::Beta { a, b } => {
            let d = rand_distr::Beta::new(*a, *b).map_err(|e| ProbError::Parameter(e.to_string()))?;
            out.extend((0..n).map(|_| Point::Real(d.sample(rng))));
        }
        Distribution::Dirichlet { alpha } => {
            for _ in 0..n {
                out.push(Point::Vector(sample_dirichlet(alpha, rng)?));
            }
        }
        Distribution::Gaussian { mean, variance } => {
            let d = rand_distr::Normal::new(*mean, variance.sqrt())
                .map_err(|e| ProbError::Parameter(e.to_string()))?;
            out.extend((0..n).map(|_| Point::Real(d.sample(rng))));
        }
        Distribution::Gamma { shape, rate } => {
            for _ in 0..n {
                out.push(Point::Real(gamma_draw(*shape, *rate, rng)?));
            }
        }
    }
    Ok(out)
}

/// A probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    p: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_simplex(&p, SIMPLEX_TOL)?;
        Ok(Self { p })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return param_err("empty support");
        }
        Ok(Self { p: vec![1.0 / n as f64; n] })
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn support_size(&self) -> usize {
        self.p.len()
    }
}

/// Rectangular joint probability table `p(x, y)`; rows index `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDist {
    rows: Vec<Vec<f64>>,
}

impl JointDist {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ncol = rows.first().map(Vec::len).unwrap_or(0);
        if ncol == 0 || rows.iter().any(|r| r.len() != ncol) {
            return param_err("joint table must be a non-empty rectangle");
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        check_simplex(&flat, JOINT_TOL)?;
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows[0].len()];
        for r in &self.rows {
            for (acc, p) in m.iter_mut().zip(r) {
                *acc += p;
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let ncol = self.rows[0].len();
        let rows = (0..ncol)
            .map(|j| self.rows.iter().map(|r| r[j]).collect())
            .collect();
        Self { rows }
    }
}

fn entropy_bits(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum();
    h.max(0.0)
}

/// Shannon entropy in bits.
pub fn entropy(p: &DiscreteDist) -> f64 {
    entropy_bits(&p.p)
}

/// Returns `(H(X,Y), H(Y|X))` in bits.
pub fn joint_conditional_entropy(joint: &JointDist) -> (f64, f64) {
    let flat: Vec<f64> = joint.rows.iter().flatten().copied().collect();
    let h_joint = entropy_bits(&flat);
    let px = joint.marginal_x();
    let mut h_cond = 0.0;
    for (row, &pxi) in joint.rows.iter().zip(&px) {
        for &pxy in row {
            if pxy > 0.0 {
                h_cond -= pxy * (pxy / pxi).log2();
            }
        }
    }
    (h_joint, h_cond.max(0.0))
}

/// Result of a KL divergence evaluation. `Infinite` signals that `p` is not
/// absolutely continuous with respect to `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn bits(self) -> f64 {
        match self {
            Divergence::Finite(d) => d,
            Divergence::Infinite => f64::INFINITY,
        }
    }
}

/// `D(p || q)` in bits.
pub fn kl_divergence(p: &DiscreteDist, q: &DiscreteDist) -> Result<Divergence> {
    if p.p.len() != q.p.len() {
        return param_err(format!(
            "support sizes differ: {} vs {}",
            p.p.len(),
            q.p.len()
        ));
    }
    let mut d = 0.0;
    for (&pi, &qi) in p.p.iter().zip(&q.p) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(Divergence::Infinite);
        }
        d += pi * (pi / qi).log2();
    }
    Ok(Divergence::Finite(d.max(0.0)))
}

/// `I(X;Y)` in bits.
pub fn mutual_information(joint: &JointDist) -> f64 {
    let px = joint.marginal_x();
    let py = joint.marginal_y();
    let mut mi = 0.0;
    for (row, &pxi) in joint.rows.iter().zip(&px) {
        for (&pxy, &pyj) in row.iter().zip(&py) {
            if pxy > 0.0 {
                mi += pxy * (pxy / (pxi * pyj)).log2();
            }
        }
    }
    mi.max(0.0)
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Maps unconstrained natural parameters onto the probability simplex.
pub fn softmax_map(phi: &[f64]) -> Result<Vec<f64>> {
    if phi.is_empty() {
        return param_err("softmax of an empty vector");
    }
    if phi.iter().any(|x| !x.is_finite()) {
        return param_err("softmax input must be finite");
    }
    let max = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = phi.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}
