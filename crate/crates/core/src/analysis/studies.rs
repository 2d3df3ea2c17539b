use serde::{Deserialize, Serialize};

use super::morozov::trial_seed;
use super::oracle::{LinearOracle, OracleSolution};
use crate::error::{Result, RmaError};
use crate::linalg::log_log_slope;
use crate::sketch::{SketchDistribution, SketchMatrix};

/// Trial-averaged errors of the sketched linear solution at one sketch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: usize,
    pub mean_abs_err_j: f64,
    pub mean_abs_err_u: f64,
    pub mean_rel_err_j: f64,
    pub mean_rel_err_u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub j_star: f64,
    pub u_star_norm: f64,
    pub points: Vec<ConvergencePoint>,
    /// Log-log slope of the mean `|J*_n - J*|` against `n`.
    pub slope_j: f64,
    /// Log-log slope of the mean `||u*_n - u*||` against `n`.
    pub slope_u: f64,
}

pub fn convergence_study(
    oracle: &LinearOracle,
    dist: SketchDistribution,
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ConvergenceStudy> {
    if n_list.len() < 2 {
        return Err(RmaError::InvalidParameter("convergence study needs two sizes".into()));
    }
    let exact = oracle.solve(None)?;
    let points = n_list
        .iter()
        .map(|&n| convergence_point(oracle, &exact, dist, n, trials, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceStudy::from_points(&exact, points))
}

/// Trial-averaged errors at one sketch size against the unsketched solution `exact`.
pub fn convergence_point(
    oracle: &LinearOracle,
    exact: &OracleSolution,
    dist: SketchDistribution,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<ConvergencePoint> {
    if trials == 0 {
        return Err(RmaError::InvalidParameter("convergence study needs one trial".into()));
    }
    let (mut ej, mut eu) = (0.0, 0.0);
    for t in 0..trials {
        let sol = sketched_solution(oracle, dist, n, trial_seed(seed, n, t))?;
        ej += (sol.cost - exact.cost).abs();
        eu += (&sol.u - &exact.u).norm();
    }
    let k = trials as f64;
    Ok(ConvergencePoint {
        n,
        mean_abs_err_j: ej / k,
        mean_abs_err_u: eu / k,
        mean_rel_err_j: ej / k / exact.cost,
        mean_rel_err_u: eu / k / exact.u.norm(),
    })
}

impl ConvergenceStudy {
    /// Fits the log-log slopes of `points`.
    pub fn from_points(exact: &OracleSolution, points: Vec<ConvergencePoint>) -> Self {
        let ns: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
        let ej: Vec<f64> = points.iter().map(|p| p.mean_abs_err_j).collect();
        let eu: Vec<f64> = points.iter().map(|p| p.mean_abs_err_u).collect();
        Self {
            j_star: exact.cost,
            u_star_norm: exact.u.norm(),
            slope_j: log_log_slope(&ns, &ej),
            slope_u: log_log_slope(&ns, &eu),
            points,
        }
    }
}

fn sketched_solution(oracle: &LinearOracle, dist: SketchDistribution, n: usize, seed: u64) -> Result<OracleSolution> {
    let sketch = SketchMatrix::build(dist, n, oracle.data_dim(), seed)?;
    oracle.solve(Some(&sketch))
}

/// Sample statistics of the sketched optimal value `J*_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCheck {
    pub n: usize,
    pub trials: usize,
    pub mean: f64,
    pub stderr: f64,
    pub j_star: f64,
}

impl BiasCheck {
    /// `mean <= J* + k * stderr`.
    pub fn is_downward(&self, k: f64) -> bool {
        self.mean <= self.j_star + k * self.stderr
    }

    /// One-sided upper confidence bound `mean + k * stderr`.
    pub fn upper_bound(&self, k: f64) -> f64 {
        self.mean + k * self.stderr
    }
}

pub fn bias_check(oracle: &LinearOracle, dist: SketchDistribution, n: usize, trials: usize, seed: u64) -> Result<BiasCheck> {
    if trials < 2 {
        return Err(RmaError::InvalidParameter("bias check needs at least two trials".into()));
    }
    let j_star = oracle.solve(None)?.cost;
    let values = (0..trials)
        .map(|t| Ok(sketched_solution(oracle, dist, n, trial_seed(seed, n, t))?.cost))
        .collect::<Result<Vec<f64>>>()?;
    let k = trials as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(BiasCheck { n, trials, mean, stderr: (var / k).sqrt(), j_star })
}
