//! MAP cost `J(u) = 1/2 ||d_hat - F_hat(u)||^2 + prior(u)` and its randomized
//! counterpart `J_n(u) = 1/2 ||S (d_hat - F_hat(u))||^2 + prior(u)`, where
//! hats denote whitening by the noise level `sigma`.
//!
//! Gradients use one adjoint solve; Gauss-Newton Hessian actions use one
//! incremental forward and one incremental adjoint solve. Sketching costs
//! only linear algebra, never extra PDE solves.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, Result, RmaError};
use crate::optimizer::NewtonProblem;
use crate::pde::{ForwardProblem, SolveCounts};
use crate::prior::GaussianPrior;
use crate::sketch::SketchMatrix;

/// Forward model, prior and (whitened) data.
#[derive(Clone, Debug)]
pub struct InverseProblem {
    forward: ForwardProblem,
    prior: GaussianPrior,
    data: DVector<f64>,
    sigma: f64,
    data_hat: DVector<f64>,
    truth: Option<DVector<f64>>,
}

impl InverseProblem {
    pub fn new(forward: ForwardProblem, prior: GaussianPrior, data: DVector<f64>, sigma: f64) -> Result<Self> {
        check_len(forward.observation_count(), data.len())?;
        check_len(forward.node_count(), prior.dim())?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(RmaError::InvalidParameter(format!("noise level must be > 0, got {sigma}")));
        }
        let data_hat = &data / sigma;
        Ok(Self { forward, prior, data, sigma, data_hat, truth: None })
    }

    pub fn with_truth(mut self, truth: DVector<f64>) -> Result<Self> {
        check_len(self.forward.node_count(), truth.len())?;
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn set_data(&mut self, data: DVector<f64>) -> Result<()> {
        check_len(self.forward.observation_count(), data.len())?;
        self.data_hat = &data / self.sigma;
        self.data = data;
        Ok(())
    }

    pub fn forward(&self) -> &ForwardProblem {
        &self.forward
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Whitened data `d / sigma`.
    pub fn data_hat(&self) -> &DVector<f64> {
        &self.data_hat
    }

    pub fn truth(&self) -> Option<&DVector<f64>> {
        self.truth.as_ref()
    }

    /// Number of observations `N`.
    pub fn data_dim(&self) -> usize {
        self.data.len()
    }

    /// Number of parameters `m`.
    pub fn param_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn solve_counts(&self) -> SolveCounts {
        self.forward.solve_counts()
    }

    /// Whitened residual `d_hat - F_hat(u)` given the state `w` at `u`.
    fn residual_from_state(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.data_hat - self.forward.observe(w) / self.sigma
    }

    /// Full whitened misfit vector at `u`: one forward solve.
    pub fn misfit(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.residual_from_state(&self.forward.solve_forward(u)?))
    }
}

#[derive(Clone, Debug)]
struct State {
    u: DVector<f64>,
    w: DVector<f64>,
    /// Full whitened residual.
    residual: DVector<f64>,
    /// Sketched residual, or a copy of the full one.
    reduced: DVector<f64>,
}

/// One entry of the cost/gradient evaluation trace.
#[derive(Clone, Debug, Serialize)]
pub struct EvalRecord {
    pub kind: &'static str,
    pub value: f64,
    pub pde_solves: u64,
}

/// Full (`J`) or randomized (`J_n`) MAP objective over an [`InverseProblem`].
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    problem: &'a InverseProblem,
    sketch: Option<SketchMatrix>,
    misfit_weight: f64,
    state: Option<State>,
    trace: Vec<EvalRecord>,
}

impl<'a> Objective<'a> {
    pub fn full(problem: &'a InverseProblem) -> Self {
        Self { problem, sketch: None, misfit_weight: 1.0, state: None, trace: Vec::new() }
    }

    pub fn sketched(problem: &'a InverseProblem, sketch: SketchMatrix) -> Result<Self> {
        check_len(problem.data_dim(), sketch.ncols())?;
        Ok(Self { sketch: Some(sketch), ..Self::full(problem) })
    }

    /// Scales the misfit term; zero leaves the prior alone.
    pub fn with_misfit_weight(mut self, weight: f64) -> Self {
        self.misfit_weight = weight;
        self
    }

    pub fn problem(&self) -> &'a InverseProblem {
        self.problem
    }

    pub fn sketch(&self) -> Option<&SketchMatrix> {
        self.sketch.as_ref()
    }

    pub fn trace(&self) -> &[EvalRecord] {
        &self.trace
    }

    /// Dimension of the (reduced) misfit vector.
    pub fn misfit_dim(&self) -> usize {
        self.sketch.as_ref().map_or(self.problem.data_dim(), SketchMatrix::nrows)
    }

    fn ensure_state(&mut self, u: &DVector<f64>) -> Result<&State> {
        let cached = self.state.as_ref().is_some_and(|s| &s.u == u);
        if !cached {
            let w = self.problem.forward.solve_forward(u)?;
            let residual = self.problem.residual_from_state(&w);
            let reduced = match &self.sketch {
                Some(s) => s.apply(&residual)?,
                None => residual.clone(),
            };
            self.state = Some(State { u: u.clone(), w, residual, reduced });
        }
        Ok(self.state.as_ref().expect("state set"))
    }

    /// `d_hat - F_hat(u)`, sketched when a sketch is present.
    pub fn misfit_vector(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.ensure_state(u)?.reduced.clone())
    }

    /// Unsketched whitened residual at `u`, sharing the cached forward solve.
    pub fn full_misfit_vector(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.ensure_state(u)?.residual.clone())
    }

    /// `(S^T) S r` for the sketch, identity without one.
    fn gram_apply(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.sketch {
            Some(s) => s.apply_transpose(&s.apply(r)?),
            None => Ok(r.clone()),
        }
    }

    pub fn cost(&mut self, u: &DVector<f64>) -> Result<f64> {
        let weight = self.misfit_weight;
        let misfit = 0.5 * weight * self.ensure_state(u)?.reduced.norm_squared();
        let value = misfit + self.problem.prior.cost(u)?;
        let pde_solves = self.problem.solve_counts().total();
        self.trace.push(EvalRecord { kind: "cost", value, pde_solves });
        Ok(value)
    }

    /// Adjoint gradient; reuses the forward state when `u` was just evaluated.
    pub fn gradient(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let weight = self.misfit_weight;
        let sigma = self.problem.sigma;
        let state = self.ensure_state(u)?.clone();
        let lifted = match &self.sketch {
            Some(s) => s.apply_transpose(&state.reduced)?,
            None => state.reduced.clone(),
        };
        let forward = &self.problem.forward;
        let adjoint = forward.solve_adjoint(u, &(lifted * (weight / sigma)))?;
        let g = self.problem.prior.gradient(u)? - forward.linearized_operator_transpose(u, &state.w, &adjoint)?;
        let pde_solves = self.problem.solve_counts().total();
        self.trace.push(EvalRecord { kind: "gradient", value: g.norm(), pde_solves });
        Ok(g)
    }

    /// Gauss-Newton misfit Hessian action `J_hat^T S^T S J_hat du`.
    pub fn misfit_hessian_action(&mut self, u: &DVector<f64>, du: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.ensure_state(u)?.w.clone();
        let forward = &self.problem.forward;
        let jdu = forward.jacobian_action(u, &w, du)?;
        let y = self.gram_apply(&jdu)? * (self.misfit_weight / (self.problem.sigma * self.problem.sigma));
        forward.jacobian_transpose_action(u, &w, &y)
    }

    /// Gauss-Newton Hessian action including the prior precision.
    pub fn gn_hessian_action(&mut self, u: &DVector<f64>, du: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.misfit_hessian_action(u, du)? + self.problem.prior.precision_action(du)?)
    }

    /// Dense whitened Jacobian of `F_hat` at `u` (`N x m`), one incremental solve per column.
    pub fn whitened_jacobian(&mut self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let w = self.ensure_state(u)?.w.clone();
        let (rows, cols) = (self.problem.data_dim(), self.problem.param_dim());
        let mut jac = DMatrix::zeros(rows, cols);
        let mut e = DVector::zeros(cols);
        for k in 0..cols {
            e[k] = 1.0;
            let col = self.problem.forward.jacobian_action(u, &w, &e)? / self.problem.sigma;
            jac.set_column(k, &col);
            e[k] = 0.0;
        }
        Ok(jac)
    }

    /// Dense prior-preconditioned Gauss-Newton misfit Hessian `L^{-1} H_misfit L^{-T}`.
    pub fn preconditioned_misfit_hessian(&mut self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let jac = self.whitened_jacobian(u)?;
        let factor = jac * self.problem.prior.dense_sqrt_covariance();
        let factor = match &self.sketch {
            Some(s) => s.apply_matrix(&factor)?,
            None => factor,
        };
        Ok(factor.tr_mul(&factor) * self.misfit_weight)
    }

    /// Leading `k` eigenvalues (descending) of the prior-preconditioned misfit Hessian.
    pub fn misfit_hessian_spectrum(&mut self, u: &DVector<f64>, k: usize) -> Result<Vec<f64>> {
        let m = self.problem.param_dim();
        if k > m {
            return Err(RmaError::InvalidParameter(format!("requested {k} eigenvalues of an {m}-dimensional operator")));
        }
        let h = self.preconditioned_misfit_hessian(u)?;
        let mut eig: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        eig.truncate(k);
        Ok(eig)
    }
}

impl NewtonProblem for Objective<'_> {
    fn dim(&self) -> usize {
        self.problem.param_dim()
    }

    fn cost(&mut self, u: &DVector<f64>) -> Result<f64> {
        Objective::cost(self, u)
    }

    fn gradient(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Objective::gradient(self, u)
    }

    fn hessian_action(&mut self, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.gn_hessian_action(u, v)
    }

    fn precondition(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        self.problem.prior.covariance_action(r)
    }

    fn solve_counts(&self) -> SolveCounts {
        self.problem.solve_counts()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{Mesh, Side};
    use crate::sketch::SketchDistribution;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Small 2D problem with data from a smooth truth plus 1% noise.
    fn small_problem(cells: usize) -> InverseProblem {
        let mesh = Arc::new(Mesh::unit_square(cells, cells, Side::Bottom).unwrap());
        let forward = ForwardProblem::new(mesh.clone(), 0.1).unwrap();
        let prior = GaussianPrior::with_zero_mean(mesh.clone(), 0.1, 1.0).unwrap();
        let truth = DVector::from_vec(mesh.interpolate(|x| (3.0 * x[0]).sin() * x[1]));
        let clean = forward.forward_map(&truth).unwrap();
        let sigma = 0.01 * clean.amax();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data = &clean + random_vec(&mut rng, clean.len()) * sigma;
        InverseProblem::new(forward, prior, data, sigma).unwrap().with_truth(truth).unwrap()
    }

    #[test]
    fn noiseless_truth_has_zero_misfit() {
        let mesh = Arc::new(Mesh::interval(16, Side::Left).unwrap());
        let forward = ForwardProblem::new(mesh.clone(), 0.1).unwrap();
        let prior = GaussianPrior::with_zero_mean(mesh.clone(), 0.1, 1.0).unwrap();
        let u0 = prior.mean().clone();
        let data = forward.forward_map(&u0).unwrap();
        let problem = InverseProblem::new(forward, prior, data, 1.0).unwrap();
        let mut obj = Objective::full(&problem);
        assert!(obj.misfit_vector(&u0).unwrap().amax() < 1e-12);
        assert!(obj.cost(&u0).unwrap() < 1e-24);
    }

    #[test]
    fn sketched_misfit_is_sketch_of_full_misfit() {
        let problem = small_problem(6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_vec(&mut rng, problem.param_dim()) * 0.2;
        let sketch = SketchMatrix::build(SketchDistribution::achlioptas(), 10, problem.data_dim(), 3).unwrap();
        let full = Objective::full(&problem).misfit_vector(&u).unwrap();
        let reduced = Objective::sketched(&problem, sketch.clone()).unwrap().misfit_vector(&u).unwrap();
        assert_eq!(reduced, sketch.apply(&full).unwrap());
    }

    #[test]
    fn sketch_shape_is_checked() {
        let problem = small_problem(3);
        let sketch = SketchMatrix::build(SketchDistribution::gaussian(), 4, 5, 0).unwrap();
        assert!(Objective::sketched(&problem, sketch).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let problem = small_problem(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_vec(&mut rng, problem.param_dim()) * 0.2;
        let sketch = SketchMatrix::build(SketchDistribution::gaussian(), 15, problem.data_dim(), 8).unwrap();
        for mut obj in [Objective::full(&problem), Objective::sketched(&problem, sketch).unwrap()] {
            let g = obj.gradient(&u).unwrap();
            for _ in 0..5 {
                let d = random_vec(&mut rng, problem.param_dim()).normalize();
                let h = 1e-5;
                let fd = (obj.cost(&(&u + &d * h)).unwrap() - obj.cost(&(&u - &d * h)).unwrap()) / (2.0 * h);
                let exact = g.dot(&d);
                assert!((fd - exact).abs() <= 1e-4 * exact.abs(), "{fd} vs {exact}");
            }
        }
    }

    #[test]
    fn zero_misfit_weight_leaves_prior_gradient() {
        let problem = small_problem(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_vec(&mut rng, problem.param_dim());
        let g = Objective::full(&problem).with_misfit_weight(0.0).gradient(&u).unwrap();
        assert_eq!(g, problem.prior().gradient(&u).unwrap());
    }

    #[test]
    fn solve_ledger_per_operation() {
        let problem = small_problem(5);
        let u = DVector::zeros(problem.param_dim());
        let mut obj = Objective::full(&problem);
        let c0 = problem.solve_counts();
        obj.cost(&u).unwrap();
        assert_eq!(problem.solve_counts().since(&c0), SolveCounts { forward: 1, adjoint: 0, incremental: 0 });
        obj.gradient(&u).unwrap();
        assert_eq!(problem.solve_counts().since(&c0), SolveCounts { forward: 1, adjoint: 1, incremental: 0 });
        obj.gn_hessian_action(&u, &DVector::from_element(problem.param_dim(), 1.0)).unwrap();
        assert_eq!(problem.solve_counts().since(&c0), SolveCounts { forward: 1, adjoint: 1, incremental: 2 });
        let mut fresh = Objective::full(&problem);
        let c1 = problem.solve_counts();
        fresh.gradient(&u).unwrap();
        assert_eq!(problem.solve_counts().since(&c1).total(), 2);
    }

    #[test]
    fn hessian_symmetric_and_matches_dense_assembly() {
        let problem = small_problem(4);
        let m = problem.param_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_vec(&mut rng, m) * 0.2;
        let sketch = SketchMatrix::build(SketchDistribution::rademacher(), 6, problem.data_dim(), 5).unwrap();
        let mut obj = Objective::sketched(&problem, sketch.clone()).unwrap();
        for _ in 0..10 {
            let (v, w) = (random_vec(&mut rng, m), random_vec(&mut rng, m));
            let hv = obj.gn_hessian_action(&u, &v).unwrap();
            let hw = obj.gn_hessian_action(&u, &w).unwrap();
            let (a, b) = (hv.dot(&w), v.dot(&hw));
            assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
        }
        let jac = obj.whitened_jacobian(&u).unwrap();
        let sj = sketch.apply_matrix(&jac).unwrap();
        let dense = sj.tr_mul(&sj) + problem.prior().dense_precision();
        let v = random_vec(&mut rng, m);
        let hv = obj.gn_hessian_action(&u, &v).unwrap();
        let oracle = &dense * &v;
        assert!((hv - &oracle).norm() <= 1e-9 * oracle.norm());
    }

    #[test]
    fn sketched_spectrum_has_rank_at_most_n() {
        let problem = small_problem(6);
        let m = problem.param_dim();
        let u = problem.prior().sample(11);
        let n = 8;
        let sketch = SketchMatrix::build(SketchDistribution::achlioptas(), n, problem.data_dim(), 2).unwrap();
        let eig = Objective::sketched(&problem, sketch).unwrap().misfit_hessian_spectrum(&u, m).unwrap();
        assert!(eig.iter().all(|&l| l >= -1e-12 * eig[0]));
        assert!(eig[n..].iter().all(|&l| l <= 1e-10 * eig[0]));
        let full = Objective::full(&problem).misfit_hessian_spectrum(&u, m).unwrap();
        let above = |e: &[f64]| e.iter().filter(|&&l| l > 1.0).count();
        assert!(above(&eig) <= above(&full));
        assert!(Objective::full(&problem).misfit_hessian_spectrum(&u, m + 1).is_err());
    }
}
