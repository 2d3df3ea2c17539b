use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RmaError};
use crate::objective::{InverseProblem, Objective};
use crate::optimizer::{minimize, SolverConfig};
use crate::sketch::{derive_seed, failure_probability, SketchDistribution, SketchMatrix, DEFAULT_LD_CONSTANT};

/// `misfit / N`.
pub fn discrepancy_quotient(misfit: f64, data_dim: usize) -> f64 {
    misfit / data_dim as f64
}

/// `||d_hat - F_hat(u)||^2 / N`; one forward solve.
pub fn discrepancy_tau(problem: &InverseProblem, u: &DVector<f64>) -> Result<f64> {
    Ok(discrepancy_quotient(problem.misfit(u)?.norm_squared(), problem.data_dim()))
}

/// Interval `[tau' / (1 + eps), tau' / (1 - eps)]` that contains `tau` when
/// the sketch distorts the residual by at most `eps`.
pub fn morozov_range(tau_prime: f64, epsilon: f64) -> Result<(f64, f64)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(RmaError::InvalidParameter(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok((tau_prime / (1.0 + epsilon), tau_prime / (1.0 - epsilon)))
}

/// One randomized inversion and its discrepancy statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorozovRecord {
    #[serde(rename = "N")]
    pub data_dim: usize,
    pub n: usize,
    pub seed: u64,
    /// `||S (d_hat - F_hat(u*_n))||^2`.
    pub jn_misfit: f64,
    pub tau_prime: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub p: f64,
    /// `||d_hat - F_hat(u*_n)||^2`.
    pub j_misfit: f64,
    pub tau: f64,
    pub success: bool,
    pub newton_iters: usize,
    pub pde_solves: u64,
}

impl MorozovRecord {
    pub fn from_misfits(data_dim: usize, n: usize, seed: u64, jn_misfit: f64, j_misfit: f64, epsilon: f64) -> Result<Self> {
        let tau_prime = discrepancy_quotient(jn_misfit, data_dim);
        let tau = discrepancy_quotient(j_misfit, data_dim);
        let (tau_lo, tau_hi) = morozov_range(tau_prime, epsilon)?;
        Ok(Self {
            data_dim,
            n,
            seed,
            jn_misfit,
            tau_prime,
            tau_lo,
            tau_hi,
            p: 1.0 - failure_probability(n, epsilon, DEFAULT_LD_CONSTANT),
            j_misfit,
            tau,
            success: tau_lo <= tau && tau <= tau_hi,
            newton_iters: 0,
            pde_solves: 0,
        })
    }
}

/// Solves the randomized problem once from the prior mean and records `tau`, `tau'`.
pub fn morozov_trial(
    problem: &InverseProblem,
    dist: SketchDistribution,
    n: usize,
    epsilon: f64,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<MorozovRecord> {
    let sketch = SketchMatrix::build(dist, n, problem.data_dim(), seed)?;
    let mut objective = Objective::sketched(problem, sketch.clone())?;
    let report = minimize(&mut objective, problem.prior().mean(), cfg)?;
    let u = report.u_final();
    let residual = objective.full_misfit_vector(&u)?;
    let jn = sketch.apply(&residual)?.norm_squared();
    let mut record = MorozovRecord::from_misfits(problem.data_dim(), n, seed, jn, residual.norm_squared(), epsilon)?;
    record.newton_iters = report.newton_iters;
    record.pde_solves = report.pde_solves;
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorozovSummary {
    pub records: Vec<MorozovRecord>,
    pub success_rate: f64,
    pub p: f64,
    pub mean_tau_prime: f64,
    pub mean_tau: f64,
}

impl MorozovSummary {
    pub fn from_records(records: Vec<MorozovRecord>) -> Result<Self> {
        let first = records.first().ok_or_else(|| RmaError::InvalidParameter("no trials".into()))?;
        let p = first.p;
        let k = records.len() as f64;
        let success_rate = records.iter().filter(|r| r.success).count() as f64 / k;
        let mean_tau_prime = records.iter().map(|r| r.tau_prime).sum::<f64>() / k;
        let mean_tau = records.iter().map(|r| r.tau).sum::<f64>() / k;
        Ok(Self { records, success_rate, p, mean_tau_prime, mean_tau })
    }
}

/// Seed of trial `t` in a study with base seed `seed` at sketch size `n`.
pub fn trial_seed(seed: u64, n: usize, t: usize) -> u64 {
    derive_seed(derive_seed(seed, n as u64), t as u64)
}

pub fn morozov_verify(
    problem: &InverseProblem,
    dist: SketchDistribution,
    n: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<MorozovSummary> {
    let records = (0..trials)
        .map(|t| morozov_trial(problem, dist, n, epsilon, trial_seed(seed, n, t), cfg))
        .collect::<Result<Vec<_>>>()?;
    MorozovSummary::from_records(records)
}

/// Pilot bisection on the trial-mean `tau'` toward 1 over `[n_lo, n_hi]`.
///
/// `tau'` grows with `n`; returns the smallest probed size whose mean `tau'`
/// reaches 1, or `n_hi` if none does.
pub fn tune_sketch_size(
    problem: &InverseProblem,
    dist: SketchDistribution,
    n_lo: usize,
    n_hi: usize,
    pilot_trials: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<usize> {
    if n_lo == 0 || n_lo > n_hi || pilot_trials == 0 {
        return Err(RmaError::InvalidParameter(format!(
            "pilot range [{n_lo}, {n_hi}] with {pilot_trials} trials is empty"
        )));
    }
    let mean_tau_prime = |n: usize| -> Result<f64> {
        let mut total = 0.0;
        for t in 0..pilot_trials {
            total += morozov_trial(problem, dist, n, 0.5, trial_seed(seed ^ 0x5eed, n, t), cfg)?.tau_prime;
        }
        Ok(total / pilot_trials as f64)
    };
    let (mut lo, mut hi) = (n_lo, n_hi);
    if mean_tau_prime(lo)? >= 1.0 {
        return Ok(lo);
    }
    if mean_tau_prime(hi)? < 1.0 {
        return Ok(hi);
    }
    while hi - lo > 1.max(lo / 10) {
        let mid = lo + (hi - lo) / 2;
        if mean_tau_prime(mid)? >= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
