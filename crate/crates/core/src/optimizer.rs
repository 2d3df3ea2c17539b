//! Inexact Gauss-Newton-CG with Armijo backtracking.

use std::cell::RefCell;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, RmaError};
use crate::pde::SolveCounts;

/// A smooth objective with Hessian(-approximation) actions.
pub trait NewtonProblem {
    fn dim(&self) -> usize;
    fn cost(&mut self, u: &DVector<f64>) -> Result<f64>;
    fn gradient(&mut self, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn hessian_action(&mut self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>>;

    /// CG preconditioner; identity unless overridden.
    fn precondition(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(r.clone())
    }

    /// PDE solves performed so far; zero for problems without a PDE.
    fn solve_counts(&self) -> SolveCounts {
        SolveCounts::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative cost change between accepted iterates.
    pub tol_cost: f64,
    /// Gradient norm relative to the initial gradient norm.
    pub tol_grad: f64,
    /// Step norm relative to the iterate norm.
    pub tol_step: f64,
    pub max_newton: usize,
    pub cg_max: usize,
    pub forcing_cap: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_cost: 1e-6,
            tol_grad: 1e-6,
            tol_step: 1e-6,
            max_newton: 200,
            cg_max: 1000,
            forcing_cap: 0.5,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_cost, self.tol_grad, self.tol_step, self.forcing_cap, self.armijo_c1];
        if positive.iter().any(|t| !(*t > 0.0)) {
            return Err(RmaError::Config("solver tolerances must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || self.armijo_c1 >= 1.0 {
            return Err(RmaError::Config("backtracking parameters must lie in (0, 1)".into()));
        }
        if self.cg_max == 0 {
            return Err(RmaError::Config("cg_max must be at least 1".into()));
        }
        Ok(())
    }

    /// Eisenstat-Walker style relative CG tolerance.
    pub fn forcing(&self, grad_norm: f64, grad_norm0: f64) -> f64 {
        self.forcing_cap.min((grad_norm / grad_norm0).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgResult {
    pub step: DVector<f64>,
    /// Hessian actions applied.
    pub iterations: usize,
    pub negative_curvature: bool,
    pub converged: bool,
}

/// Preconditioned CG for `H p = -g`, stopped when `||H p + g|| <= forcing ||g||`.
///
/// Residuals are kept mutually orthogonal in the preconditioner inner
/// product, so a preconditioned operator with `k` distinct eigenvalues
/// converges in about `k` iterations even when badly conditioned.
///
/// On non-positive curvature the current iterate is returned, or the
/// preconditioned steepest-descent direction if no step was taken yet.
pub fn cg_solve(
    mut hess: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    mut precond: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    g: &DVector<f64>,
    forcing: f64,
    cg_max: usize,
) -> Result<CgResult> {
    let target = forcing * g.norm();
    let mut x = DVector::zeros(g.len());
    let mut r = -g;
    if r.norm() <= target {
        return Ok(CgResult { step: x, iterations: 0, negative_curvature: false, converged: true });
    }
    let mut z = precond(&r)?;
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    let mut basis: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::new();
    for it in 1..=cg_max {
        let hd = hess(&d)?;
        let curvature = d.dot(&hd);
        if !(curvature > 0.0) {
            let step = if it == 1 { d } else { x };
            return Ok(CgResult { step, iterations: it, negative_curvature: true, converged: false });
        }
        let alpha = rz / curvature;
        basis.push((z.clone(), r.clone(), rz));
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &hd, 1.0);
        if r.norm() <= target {
            return Ok(CgResult { step: x, iterations: it, negative_curvature: false, converged: true });
        }
        for (zj, rj, rzj) in &basis {
            let coef = zj.dot(&r) / rzj;
            r.axpy(-coef, rj, 1.0);
        }
        z = precond(&r)?;
        let rz_next = r.dot(&z);
        d = &z + &d * (rz_next / rz);
        rz = rz_next;
    }
    Ok(CgResult { step: x, iterations: cg_max, negative_curvature: false, converged: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    Cost,
    Step,
    MaxIterations,
    Linesearch,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, Self::Gradient | Self::Cost | Self::Step)
    }
}

/// Row of the per-iteration history; iteration 0 is the initial point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub cg_iters: usize,
    pub step_length: f64,
    pub backtracks: usize,
    pub pde_solves: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub u_final: Vec<f64>,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    pub newton_iters: usize,
    pub cg_iters: usize,
    pub gradient_evals: usize,
    pub cost_evals: usize,
    pub pde_solves: u64,
    pub solve_counts: SolveCounts,
    pub converged: bool,
    pub reason: StopReason,
    pub history: Vec<IterationRecord>,
    pub wall_time_s: f64,
}

impl SolveReport {
    /// PDE solves implied by the evaluation counts for an objective that
    /// caches its forward state: one forward per cost evaluation, one
    /// adjoint per gradient, two incremental solves per CG iteration.
    pub fn expected_pde_solves(&self) -> u64 {
        (self.cost_evals + self.gradient_evals + 2 * self.cg_iters) as u64
    }

    pub fn u_final(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u_final)
    }
}

/// Cost at a trial point; failed PDE solves count as rejection.
fn trial_cost<P: NewtonProblem>(problem: &mut P, u: &DVector<f64>) -> Result<f64> {
    match problem.cost(u) {
        Ok(c) if c.is_finite() => Ok(c),
        Ok(_) | Err(RmaError::Singular(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

pub fn minimize<P: NewtonProblem>(problem: &mut P, u_init: &DVector<f64>, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    check_len(problem.dim(), u_init.len())?;
    let start = Instant::now();
    let counts0 = problem.solve_counts();
    let solves = |p: &P| p.solve_counts().since(&counts0).total();

    let mut u = u_init.clone();
    let mut cost = problem.cost(&u)?;
    let mut g = problem.gradient(&u)?;
    let (mut cost_evals, mut gradient_evals, mut cg_total) = (1, 1, 0);
    let g0 = g.norm();
    let mut history = vec![IterationRecord {
        iter: 0,
        cost,
        grad_norm: g0,
        cg_iters: 0,
        step_length: 0.0,
        backtracks: 0,
        pde_solves: solves(problem),
    }];

    let mut reason = StopReason::MaxIterations;
    let mut iters = 0;
    if g0 == 0.0 {
        reason = StopReason::Gradient;
    }
    while reason == StopReason::MaxIterations && iters < cfg.max_newton {
        let gnorm = g.norm();
        let forcing = cfg.forcing(gnorm, g0);
        let cg = {
            let cell = RefCell::new(&mut *problem);
            cg_solve(
                |v| cell.borrow_mut().hessian_action(&u, v),
                |r| cell.borrow().precondition(r),
                &g,
                forcing,
                cfg.cg_max,
            )?
        };
        cg_total += cg.iterations;
        let p = cg.step;
        let slope = g.dot(&p);

        let mut alpha = 1.0;
        let mut accepted = None;
        for backtracks in 0..=cfg.max_backtracks {
            let trial = &u + &p * alpha;
            let c = trial_cost(problem, &trial)?;
            cost_evals += 1;
            if c <= cost + cfg.armijo_c1 * alpha * slope {
                accepted = Some((trial, c, backtracks));
                break;
            }
            alpha *= cfg.backtrack;
        }
        let Some((u_next, cost_next, backtracks)) = accepted else {
            reason = StopReason::Linesearch;
            break;
        };
        iters += 1;
        let step_norm = (&u_next - &u).norm();
        let cost_change = (cost - cost_next).abs();
        let u_norm = u.norm();
        u = u_next;
        let prev_cost = cost;
        cost = cost_next;
        g = problem.gradient(&u)?;
        gradient_evals += 1;
        history.push(IterationRecord {
            iter: iters,
            cost,
            grad_norm: g.norm(),
            cg_iters: cg.iterations,
            step_length: alpha,
            backtracks,
            pde_solves: solves(problem),
        });
        if g.norm() <= cfg.tol_grad * g0 {
            reason = StopReason::Gradient;
        } else if cost_change <= cfg.tol_cost * prev_cost.abs().max(f64::MIN_POSITIVE) {
            reason = StopReason::Cost;
        } else if step_norm <= cfg.tol_step * u_norm.max(1.0) {
            reason = StopReason::Step;
        }
    }

    let counts = problem.solve_counts().since(&counts0);
    Ok(SolveReport {
        u_final: u.as_slice().to_vec(),
        final_cost: cost,
        final_grad_norm: g.norm(),
        newton_iters: iters,
        cg_iters: cg_total,
        gradient_evals,
        cost_evals,
        pde_solves: counts.total(),
        solve_counts: counts,
        converged: reason.converged(),
        reason,
        history,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// `1/2 x^T A x - b^T x`.
    struct Quadratic {
        a: DMatrix<f64>,
        b: DVector<f64>,
    }

    impl NewtonProblem for Quadratic {
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn cost(&mut self, u: &DVector<f64>) -> Result<f64> {
            Ok(0.5 * u.dot(&(&self.a * u)) - self.b.dot(u))
        }
        fn gradient(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(&self.a * u - &self.b)
        }
        fn hessian_action(&mut self, _u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(&self.a * v)
        }
    }

    fn random_spd(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = q.tr_mul(&q) + DMatrix::identity(n, n) * 0.5;
        let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (a, b)
    }

    #[test]
    fn cg_identity_takes_one_iteration() {
        let g = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let res = cg_solve(|v| Ok(v.clone()), |r| Ok(r.clone()), &g, 1e-12, 10).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
        assert_eq!(res.step, -g);
    }

    #[test]
    fn cg_matches_dense_solve() {
        let (a, g) = random_spd(20, 1);
        let direct = a.clone().cholesky().unwrap().solve(&(-&g));
        let forcing = 1e-10;
        let res = cg_solve(|v| Ok(&a * v), |r| Ok(r.clone()), &g, forcing, 200).unwrap();
        assert!(res.converged);
        assert!((&a * &res.step + &g).norm() <= forcing * g.norm());
        assert!((&res.step - &direct).norm() <= 1e-6 * direct.norm());
    }

    #[test]
    fn cg_with_exact_preconditioner_converges_immediately() {
        let (a, g) = random_spd(15, 2);
        let chol = a.clone().cholesky().unwrap();
        let res = cg_solve(|v| Ok(&a * v), |r| Ok(chol.solve(r)), &g, 1e-10, 50).unwrap();
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn cg_reports_negative_curvature() {
        let g = DVector::from_vec(vec![1.0, 1.0]);
        let res = cg_solve(|v| Ok(-v), |r| Ok(r.clone()), &g, 1e-8, 10).unwrap();
        assert!(res.negative_curvature);
        assert_eq!(res.step, -g);
    }

    #[test]
    fn cg_cap_flags_nonconvergence() {
        let (a, g) = random_spd(30, 3);
        let res = cg_solve(|v| Ok(&a * v), |r| Ok(r.clone()), &g, 1e-14, 2).unwrap();
        assert_eq!(res.iterations, 2);
        assert!(!res.converged);
    }

    #[test]
    fn minimize_quadratic_matches_direct_solve() {
        let (a, b) = random_spd(25, 4);
        let direct = a.clone().cholesky().unwrap().solve(&b);
        let mut q = Quadratic { a, b };
        let cfg = SolverConfig { tol_grad: 1e-12, tol_cost: 1e-15, tol_step: 1e-15, ..SolverConfig::default() };
        let report = minimize(&mut q, &DVector::zeros(25), &cfg).unwrap();
        assert!(report.converged);
        assert!((report.u_final() - &direct).norm() <= 1e-6 * direct.norm());
        for w in report.history.windows(2) {
            assert!(w[1].cost <= w[0].cost);
        }
        assert_eq!(report.pde_solves, 0);
    }

    #[test]
    fn zero_gradient_stops_immediately() {
        let mut q = Quadratic { a: DMatrix::identity(3, 3), b: DVector::zeros(3) };
        let report = minimize(&mut q, &DVector::zeros(3), &SolverConfig::default()).unwrap();
        assert_eq!(report.newton_iters, 0);
        assert_eq!(report.reason, StopReason::Gradient);
    }

    #[test]
    fn ascent_direction_fails_line_search() {
        /// Reports the negated gradient, so every step goes uphill.
        struct Liar(Quadratic);
        impl NewtonProblem for Liar {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn cost(&mut self, u: &DVector<f64>) -> Result<f64> {
                self.0.cost(u)
            }
            fn gradient(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
                Ok(-self.0.gradient(u)?)
            }
            fn hessian_action(&mut self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
                self.0.hessian_action(u, v)
            }
        }
        let (a, b) = random_spd(5, 5);
        let mut liar = Liar(Quadratic { a, b });
        let report = minimize(&mut liar, &DVector::zeros(5), &SolverConfig::default()).unwrap();
        assert_eq!(report.reason, StopReason::Linesearch);
        assert!(!report.converged);
        assert_eq!(report.cost_evals, 1 + 31);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { tol_grad: 0.0, ..SolverConfig::default() }.validate().is_err());
        assert!(SolverConfig { backtrack: 1.0, ..SolverConfig::default() }.validate().is_err());
        let cfg = SolverConfig::default();
        assert_eq!(cfg.forcing(1.0, 1.0), 0.5);
        assert_eq!(cfg.forcing(1e-4, 1.0), 1e-2);
    }
}
