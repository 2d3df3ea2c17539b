//! Gaussian prior with covariance `A^{-2}`, `A = gamma (-Laplacian) + delta I`.
//!
//! Discretely `A_h = gamma K + delta M` with natural boundary conditions and
//! the precision is `R = A_h M_L^{-1} A_h`, `M_L` the lumped mass. Writing
//! `R = L L^T` with `L = A_h M_L^{-1/2}`, samples are `u0 + L^{-T} xi`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::CscMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Result, RmaError};
use crate::linalg::{csc_mul, csc_to_dense, FemPattern, SpdSolver};
use crate::pde::Mesh;

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct GaussianPrior {
    mesh: Arc<Mesh>,
    gamma: f64,
    delta: f64,
    mean: DVector<f64>,
    operator: CscMatrix<f64>,
    lumped_mass: DVector<f64>,
    solver: SpdSolver,
}

impl GaussianPrior {
    pub fn new(mesh: Arc<Mesh>, gamma: f64, delta: f64, mean: DVector<f64>) -> Result<Self> {
        if !(gamma > 0.0 && delta > 0.0) {
            return Err(RmaError::InvalidParameter(format!(
                "prior weights must be positive, got gamma={gamma}, delta={delta}"
            )));
        }
        check_len(mesh.node_count(), mean.len())?;
        let pattern = FemPattern::new(&mesh);
        let operator = pattern.matrix(pattern.assemble_values(&mesh, |_| gamma, delta, 0.0));
        let mass = pattern.matrix(pattern.assemble_values(&mesh, |_| 0.0, 1.0, 0.0));
        let lumped_mass = csc_mul(&mass, &DVector::from_element(mesh.node_count(), 1.0));
        let solver = SpdSolver::new(&operator)?;
        Ok(Self { mesh, gamma, delta, mean, operator, lumped_mass, solver })
    }

    pub fn with_zero_mean(mesh: Arc<Mesh>, gamma: f64, delta: f64) -> Result<Self> {
        let n = mesh.node_count();
        Self::new(mesh, gamma, delta, DVector::zeros(n))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn operator(&self) -> &CscMatrix<f64> {
        &self.operator
    }

    pub fn lumped_mass(&self) -> &DVector<f64> {
        &self.lumped_mass
    }

    /// `M_L^{-1/2} A_h v`, so that `v^T R v = ||whiten(v)||^2`.
    fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        csc_mul(&self.operator, v).component_div(&self.lumped_mass.map(f64::sqrt))
    }

    /// `1/2 (u - u0)^T R (u - u0)`.
    pub fn cost(&self, u: &DVector<f64>) -> Result<f64> {
        check_len(self.dim(), u.len())?;
        Ok(0.5 * self.whiten(&(u - &self.mean)).norm_squared())
    }

    /// `R (u - u0)`.
    pub fn gradient(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), u.len())?;
        self.precision_action(&(u - &self.mean))
    }

    /// `R v`.
    pub fn precision_action(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), v.len())?;
        let inner = csc_mul(&self.operator, v).component_div(&self.lumped_mass);
        Ok(csc_mul(&self.operator, &inner))
    }

    /// `R^{-1} v = A_h^{-1} M_L A_h^{-1} v`.
    pub fn covariance_action(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), v.len())?;
        let inner = self.solver.solve(v).component_mul(&self.lumped_mass);
        Ok(self.solver.solve(&inner))
    }

    /// `L^{-T} z = A_h^{-1} M_L^{1/2} z`.
    pub fn sqrt_covariance_action(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), z.len())?;
        Ok(self.solver.solve(&z.component_mul(&self.lumped_mass.map(f64::sqrt))))
    }

    /// `L^{-1} v = M_L^{1/2} A_h^{-1} v`.
    pub fn sqrt_covariance_transpose_action(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), v.len())?;
        Ok(self.solver.solve(v).component_mul(&self.lumped_mass.map(f64::sqrt)))
    }

    /// Dense `L^{-T}`, one prior solve per column.
    pub fn dense_sqrt_covariance(&self) -> DMatrix<f64> {
        let diag = DMatrix::from_diagonal(&self.lumped_mass.map(f64::sqrt));
        self.solver.solve_matrix(&diag)
    }

    /// Dense `R`.
    pub fn dense_precision(&self) -> DMatrix<f64> {
        let a = csc_to_dense(&self.operator);
        let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / self.lumped_mass[i]);
        &a * scaled
    }

    /// `u0 + L^{-T} xi` with `xi` standard normal per node.
    pub fn sample(&self, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.sqrt_covariance_action(&xi).expect("length matches")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::Side;
    use approx::assert_relative_eq;

    fn prior_1d(cells: usize) -> GaussianPrior {
        GaussianPrior::with_zero_mean(Arc::new(Mesh::interval(cells, Side::Left).unwrap()), 0.1, 1.0).unwrap()
    }

    fn random_vec(seed: u64, n: usize) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn cost_vanishes_at_mean_and_scales_quadratically() {
        let mesh = Arc::new(Mesh::unit_square(5, 5, Side::Bottom).unwrap());
        let mean = random_vec(1, 36);
        let prior = GaussianPrior::new(mesh, 0.1, 1.0, mean.clone()).unwrap();
        assert_eq!(prior.cost(&mean).unwrap(), 0.0);
        assert_eq!(prior.gradient(&mean).unwrap().amax(), 0.0);
        let v = random_vec(2, 36);
        let c1 = prior.cost(&(&mean + &v)).unwrap();
        let c2 = prior.cost(&(&mean + &v * 2.0)).unwrap();
        assert_relative_eq!(c2, 4.0 * c1, max_relative = 1e-14);
    }

    #[test]
    fn cost_matches_dense_oracle() {
        let prior = prior_1d(49);
        let u = random_vec(3, 50);
        let a = csc_to_dense(prior.operator());
        let w = DMatrix::from_diagonal(&prior.lumped_mass().map(|m| 1.0 / m.sqrt()));
        let oracle = 0.5 * (w * a * &u).norm_squared();
        assert_relative_eq!(prior.cost(&u).unwrap(), oracle, max_relative = 1e-12);
        let r = prior.dense_precision();
        assert_relative_eq!(0.5 * u.dot(&(&r * &u)), oracle, max_relative = 1e-12);
        assert!((prior.precision_action(&u).unwrap() - &r * &u).amax() <= 1e-12 * (&r * &u).amax());
    }

    #[test]
    fn precision_is_symmetric_positive_definite() {
        let prior = GaussianPrior::with_zero_mean(Arc::new(Mesh::unit_square(6, 6, Side::Bottom).unwrap()), 0.1, 1.0).unwrap();
        let r = prior.dense_precision();
        assert!((&r - r.transpose()).amax() <= 1e-12 * r.amax());
        for seed in 0..20 {
            let v = random_vec(seed, prior.dim());
            assert!(v.dot(&prior.precision_action(&v).unwrap()) > 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prior = prior_1d(40);
        let u = random_vec(5, 41);
        let g = prior.gradient(&u).unwrap();
        for seed in 10..15 {
            let d = random_vec(seed, 41).normalize();
            let h = 1e-5;
            let fd = (prior.cost(&(&u + &d * h)).unwrap() - prior.cost(&(&u - &d * h)).unwrap()) / (2.0 * h);
            let exact = g.dot(&d);
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
        }
    }

    #[test]
    fn covariance_inverts_precision() {
        let prior = prior_1d(30);
        let v = random_vec(8, 31);
        let back = prior.precision_action(&prior.covariance_action(&v).unwrap()).unwrap();
        assert!((back - &v).amax() < 1e-9 * v.amax());
        let z = random_vec(9, 31);
        let lt = prior.sqrt_covariance_action(&z).unwrap();
        let l = prior.sqrt_covariance_transpose_action(&z).unwrap();
        let dense = prior.dense_sqrt_covariance();
        assert!((lt - &dense * &z).amax() < 1e-12);
        assert!((l - dense.transpose() * &z).amax() < 1e-12);
    }

    #[test]
    fn sample_statistics_match_dense_covariance() {
        let prior = prior_1d(29);
        let cov = prior.dense_precision().try_inverse().unwrap();
        let count = 10_000;
        let mut sum = DVector::zeros(30);
        let mut sum_sq = DVector::zeros(30);
        for seed in 0..count {
            let s = prior.sample(seed);
            sum += &s;
            sum_sq += s.component_mul(&s);
        }
        let mean = &sum / count as f64;
        let var = &sum_sq / count as f64 - mean.component_mul(&mean);
        for i in 0..30 {
            assert!((var[i] / cov[(i, i)] - 1.0).abs() <= 0.15, "node {i}");
            let stderr = (cov[(i, i)] / count as f64).sqrt();
            assert!(mean[i].abs() <= 4.0 * stderr, "node {i}");
        }
        assert_eq!(prior.sample(7), prior.sample(7));
    }

    #[test]
    fn rejects_bad_weights() {
        let mesh = Arc::new(Mesh::interval(4, Side::Left).unwrap());
        assert!(GaussianPrior::with_zero_mean(mesh.clone(), 0.0, 1.0).is_err());
        assert!(GaussianPrior::new(mesh, 0.1, 1.0, DVector::zeros(3)).is_err());
    }
}
