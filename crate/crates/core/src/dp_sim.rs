//! Generative simulators for the Dirichlet-process family.
//!
//! Chinese restaurant process, Chinese restaurant franchise, the dim-sum
//! process (a franchise whose dish parameters drift as Brownian motion) and
//! time-decayed popularity counts.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

type Result<T> = std::result::Result<T, DpError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub table_of_customer: Vec<usize>,
    pub table_sizes: Vec<usize>,
}

impl Partition {
    pub fn num_tables(&self) -> usize {
        self.table_sizes.len()
    }

    pub fn num_customers(&self) -> usize {
        self.table_of_customer.len()
    }

    /// Table sizes in decreasing order; the exchangeable summary of the partition.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = self.table_sizes.clone();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FranchiseState {
    pub restaurants: Vec<Partition>,
    /// `dish_of_table[d][t]` is the global dish served at table `t` of restaurant `d`.
    pub dish_of_table: Vec<Vec<usize>>,
    /// Number of tables serving each dish across all restaurants.
    pub dish_usage: Vec<usize>,
}

impl FranchiseState {
    pub fn num_dishes(&self) -> usize {
        self.dish_usage.len()
    }

    pub fn total_tables(&self) -> usize {
        self.restaurants.iter().map(Partition::num_tables).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimSumTrajectory {
    pub arrival_times: Vec<f64>,
    /// Franchise after each arrival; entry `d` covers restaurants `0..=d`.
    pub states: Vec<FranchiseState>,
    /// `dish_params[d][k]` is the parameter vector of dish `k` right after arrival `d`.
    pub dish_params: Vec<Vec<Vec<f64>>>,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(DpError::Parameter(format!("{name} must be > 0, got {x}")))
    }
}

/// Picks index `k` with probability `weights[k] / total`, or `weights.len()`
/// with probability `extra / total`.
fn urn_draw<R: Rng + ?Sized>(weights: &[usize], extra: f64, rng: &mut R) -> usize {
    let total = weights.iter().sum::<usize>() as f64 + extra;
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        u -= w as f64;
        if u < 0.0 {
            return k;
        }
    }
    weights.len()
}

fn seat_customers<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R, mut on_new_table: impl FnMut(&mut R)) -> Partition {
    let mut p = Partition { table_of_customer: Vec::with_capacity(n), table_sizes: Vec::new() };
    for _ in 0..n {
        let k = urn_draw(&p.table_sizes, alpha, rng);
        if k == p.table_sizes.len() {
            p.table_sizes.push(0);
            on_new_table(rng);
        }
        p.table_sizes[k] += 1;
        p.table_of_customer.push(k);
    }
    p
}

/// Seats `n` customers by the Chinese restaurant process with concentration `alpha`.
pub fn crp_partition<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Result<Partition> {
    if n == 0 {
        return Err(DpError::Parameter("n must be >= 1".into()));
    }
    check_positive("alpha", alpha)?;
    Ok(seat_customers(n, alpha, rng, |_| {}))
}

fn seat_restaurant<R: Rng + ?Sized>(
    size: usize,
    alpha: f64,
    gamma: f64,
    state: &mut FranchiseState,
    rng: &mut R,
) -> usize {
    let before = state.num_dishes();
    let mut dishes = Vec::new();
    let usage = &mut state.dish_usage;
    let p = seat_customers(size, alpha, rng, |rng| {
        let k = urn_draw(usage, gamma, rng);
        if k == usage.len() {
            usage.push(0);
        }
        usage[k] += 1;
        dishes.push(k);
    });
    state.restaurants.push(p);
    state.dish_of_table.push(dishes);
    state.num_dishes() - before
}

fn check_sizes(doc_sizes: &[usize]) -> Result<()> {
    if let Some(d) = doc_sizes.iter().position(|&s| s == 0) {
        return Err(DpError::Parameter(format!("document {d} has no words")));
    }
    Ok(())
}

/// Samples a Chinese restaurant franchise with one restaurant per document.
pub fn crfp_sample<R: Rng + ?Sized>(doc_sizes: &[usize], alpha: f64, gamma: f64, rng: &mut R) -> Result<FranchiseState> {
    check_sizes(doc_sizes)?;
    check_positive("alpha", alpha)?;
    check_positive("gamma", gamma)?;
    let mut state = FranchiseState { restaurants: vec![], dish_of_table: vec![], dish_usage: vec![] };
    for &n in doc_sizes {
        seat_restaurant(n, alpha, gamma, &mut state, rng);
    }
    Ok(state)
}

/// Samples the dim-sum process.
///
/// Seating uses `seating_rng` exactly as [`crfp_sample`] does; dish
/// parameters (new dishes from `N(0, I)`, then Gaussian increments with
/// variance `drift_v * dt` per coordinate) use `drift_rng`.
#[allow(clippy::too_many_arguments)]
pub fn dim_sum_sample<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    doc_sizes: &[usize],
    arrival_times: &[f64],
    alpha: f64,
    gamma: f64,
    drift_v: f64,
    param_dim: usize,
    seating_rng: &mut R1,
    drift_rng: &mut R2,
) -> Result<DimSumTrajectory> {
    if doc_sizes.len() != arrival_times.len() {
        return Err(DpError::Shape(format!(
            "{} documents but {} arrival times",
            doc_sizes.len(),
            arrival_times.len()
        )));
    }
    check_sizes(doc_sizes)?;
    check_positive("alpha", alpha)?;
    check_positive("gamma", gamma)?;
    if !(drift_v >= 0.0 && drift_v.is_finite()) {
        return Err(DpError::Parameter(format!("drift_v must be >= 0, got {drift_v}")));
    }
    if arrival_times.iter().any(|t| !t.is_finite()) {
        return Err(DpError::Parameter("arrival times must be finite".into()));
    }
    if let Some(i) = arrival_times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(DpError::Parameter(format!("arrival times not strictly increasing at {}", i + 1)));
    }

    let mut state = FranchiseState { restaurants: vec![], dish_of_table: vec![], dish_usage: vec![] };
    let mut params: Vec<Vec<f64>> = Vec::new();
    let mut traj = DimSumTrajectory { arrival_times: arrival_times.to_vec(), states: vec![], dish_params: vec![] };
    for (d, &n) in doc_sizes.iter().enumerate() {
        if d > 0 {
            let sd = (drift_v * (arrival_times[d] - arrival_times[d - 1])).sqrt();
            for p in params.iter_mut() {
                for x in p.iter_mut() {
                    let z: f64 = StandardNormal.sample(drift_rng);
                    *x += sd * z;
                }
            }
        }
        let added = seat_restaurant(n, alpha, gamma, &mut state, seating_rng);
        for _ in 0..added {
            params.push((0..param_dim).map(|_| StandardNormal.sample(drift_rng)).collect());
        }
        traj.states.push(state.clone());
        traj.dish_params.push(params.clone());
    }
    Ok(traj)
}

/// Time-decayed dish popularity `m'_k = sum_{delta=1..width} exp(-delta/decay) m_{k,t-delta}`.
///
/// `history` holds one row of per-dish counts per past epoch, oldest first;
/// the last row is epoch `t - 1`.
pub fn tdpm_decayed_counts(history: &[Vec<f64>], width_delta: usize, decay_lambda: f64) -> Result<Vec<f64>> {
    check_positive("decay_lambda", decay_lambda)?;
    if width_delta > history.len() {
        return Err(DpError::Shape(format!(
            "width {} exceeds {} epochs of history",
            width_delta,
            history.len()
        )));
    }
    let k = history.first().map_or(0, Vec::len);
    if history.iter().any(|r| r.len() != k) {
        return Err(DpError::Shape("history rows have different lengths".into()));
    }
    if history.iter().flatten().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(DpError::Parameter("counts must be finite and >= 0".into()));
    }
    let mut out = vec![0.0; k];
    for (delta, row) in (1..=width_delta).zip(history.iter().rev()) {
        let w = (-(delta as f64) / decay_lambda).exp();
        for (o, c) in out.iter_mut().zip(row) {
            *o += w * c;
        }
    }
    Ok(out)
}
