use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result, RmaError};
use crate::objective::{InverseProblem, Objective};
use crate::optimizer::NewtonProblem;
use crate::sketch::SketchMatrix;

/// Largest parameter dimension for which dense oracles are built.
pub const MAX_ORACLE_DIM: usize = 2000;

/// Quadratic model `1/2 ||S (b - J u)||^2 + 1/2 (u - u0)^T R (u - u0)` of an
/// inverse problem linearized at `u_lin`, held densely.
///
/// `J` is the whitened Jacobian and `b = d_hat - F_hat(u_lin) + J u_lin`.
#[derive(Clone, Debug)]
pub struct LinearOracle {
    jacobian: DMatrix<f64>,
    precision: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
    data: DVector<f64>,
    u0: DVector<f64>,
    /// `J L^{-T}`.
    whitened: DMatrix<f64>,
    /// `b - J u0`.
    centered: DVector<f64>,
}

/// Minimizer and optimal value of the (sketched) quadratic.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub u: DVector<f64>,
    pub cost: f64,
}

impl LinearOracle {
    /// Assembles the Jacobian column by column: `m` incremental solves.
    pub fn build(problem: &InverseProblem, u_lin: &DVector<f64>) -> Result<Self> {
        let m = problem.param_dim();
        if m > MAX_ORACLE_DIM {
            return Err(RmaError::TooLarge { got: m, max: MAX_ORACLE_DIM });
        }
        let mut objective = Objective::full(problem);
        let jacobian = objective.whitened_jacobian(u_lin)?;
        let residual = objective.full_misfit_vector(u_lin)?;
        let data = residual + &jacobian * u_lin;
        let prior = problem.prior();
        Self::assemble(jacobian, prior.dense_precision(), prior.dense_sqrt_covariance(), data, prior.mean().clone())
    }

    /// Oracle from explicit dense parts; `precision` must be SPD.
    pub fn from_parts(jacobian: DMatrix<f64>, precision: DMatrix<f64>, data: DVector<f64>, u0: DVector<f64>) -> Result<Self> {
        let chol = precision
            .clone()
            .cholesky()
            .ok_or_else(|| RmaError::Singular("prior precision is not positive definite".into()))?;
        let m = precision.nrows();
        let mut sqrt_cov = DMatrix::identity(m, m);
        if !chol.l().transpose().solve_upper_triangular_mut(&mut sqrt_cov) {
            return Err(RmaError::Singular("prior factor is singular".into()));
        }
        Self::assemble(jacobian, precision, sqrt_cov, data, u0)
    }

    fn assemble(
        jacobian: DMatrix<f64>,
        precision: DMatrix<f64>,
        sqrt_cov: DMatrix<f64>,
        data: DVector<f64>,
        u0: DVector<f64>,
    ) -> Result<Self> {
        check_len(jacobian.nrows(), data.len())?;
        check_len(jacobian.ncols(), u0.len())?;
        check_len(jacobian.ncols(), precision.nrows())?;
        let whitened = &jacobian * &sqrt_cov;
        let centered = &data - &jacobian * &u0;
        Ok(Self { jacobian, precision, sqrt_cov, data, u0, whitened, centered })
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Effective whitened data `b`.
    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn u0(&self) -> &DVector<f64> {
        &self.u0
    }

    pub fn data_dim(&self) -> usize {
        self.jacobian.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.jacobian.ncols()
    }

    /// `b - J u`.
    pub fn misfit(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.data - &self.jacobian * u
    }

    pub fn cost(&self, u: &DVector<f64>, sketch: Option<&SketchMatrix>) -> Result<f64> {
        check_len(self.param_dim(), u.len())?;
        let r = self.misfit(u);
        let misfit = match sketch {
            Some(s) => s.apply(&r)?.norm_squared(),
            None => r.norm_squared(),
        };
        let du = u - &self.u0;
        Ok(0.5 * misfit + 0.5 * du.dot(&(&self.precision * &du)))
    }

    /// Dense solve of `(J^T S^T S J + R) u = J^T S^T S b + R u0`.
    pub fn normal_equations_solve(&self, sketch: Option<&SketchMatrix>) -> Result<DVector<f64>> {
        let (a, rhs) = self.normal_system(sketch)?;
        let chol = a
            .cholesky()
            .ok_or_else(|| RmaError::Singular("normal equations are not positive definite".into()))?;
        Ok(chol.solve(&rhs))
    }

    fn normal_system(&self, sketch: Option<&SketchMatrix>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (sj, sb) = match sketch {
            Some(s) => (s.apply_matrix(&self.jacobian)?, s.apply(&self.data)?),
            None => (self.jacobian.clone(), self.data.clone()),
        };
        let a = sj.tr_mul(&sj) + &self.precision;
        let rhs = sj.tr_mul(&sb) + &self.precision * &self.u0;
        Ok((a, rhs))
    }

    /// Residual of the first-order optimality conditions at `u`.
    pub fn optimality_residual(&self, u: &DVector<f64>, sketch: Option<&SketchMatrix>) -> Result<DVector<f64>> {
        let (a, rhs) = self.normal_system(sketch)?;
        Ok(a * u - rhs)
    }

    /// Minimizer and optimal value in whitened coordinates `z = L^T (u - u0)`.
    ///
    /// With a sketch of `n` rows this factors the `n x n` matrix
    /// `I + B B^T`, `B = S J L^{-T}`; otherwise the `m x m` matrix `I + G^T G`.
    pub fn solve(&self, sketch: Option<&SketchMatrix>) -> Result<OracleSolution> {
        let z = match sketch {
            Some(s) if s.nrows() < self.param_dim() => {
                let b = s.apply_matrix(&self.whitened)?;
                let sc = s.apply(&self.centered)?;
                let mut k = &b * b.transpose();
                for i in 0..k.nrows() {
                    k[(i, i)] += 1.0;
                }
                let y = spd_solve(k, &sc)?;
                let cost = 0.5 * sc.dot(&y);
                let z = b.tr_mul(&y);
                return Ok(OracleSolution { u: &self.u0 + &self.sqrt_cov * z, cost });
            }
            Some(s) => {
                let b = s.apply_matrix(&self.whitened)?;
                let sc = s.apply(&self.centered)?;
                spd_solve(identity_plus_gram(&b), &b.tr_mul(&sc))?
            }
            None => spd_solve(identity_plus_gram(&self.whitened), &self.whitened.tr_mul(&self.centered))?,
        };
        let u = &self.u0 + &self.sqrt_cov * &z;
        let cost = self.cost(&u, sketch)?;
        Ok(OracleSolution { u, cost })
    }

    /// `eps / lambda_min(J^T S^T S J + R) * (||J|| ||u*|| + ||b||) * ||J||`.
    pub fn theorem_error_bound(&self, sketch: &SketchMatrix, epsilon: f64, u_star: &DVector<f64>) -> Result<f64> {
        let (a, _) = self.normal_system(Some(sketch))?;
        let lambda_min = a.symmetric_eigenvalues().min();
        if !(lambda_min > 0.0) {
            return Err(RmaError::Singular("sketched normal matrix is not positive definite".into()));
        }
        let j_norm = self.jacobian_norm();
        Ok(epsilon / lambda_min * (j_norm * u_star.norm() + self.data.norm()) * j_norm)
    }

    /// Spectral norm of the whitened Jacobian.
    pub fn jacobian_norm(&self) -> f64 {
        self.jacobian.tr_mul(&self.jacobian).symmetric_eigenvalues().max().max(0.0).sqrt()
    }

    /// Quadratic model as a Newton problem, optionally sketched.
    pub fn problem<'a>(&'a self, sketch: Option<&'a SketchMatrix>) -> OracleProblem<'a> {
        OracleProblem { oracle: self, sketch }
    }
}

fn identity_plus_gram(b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut k = b.tr_mul(b);
    for i in 0..k.nrows() {
        k[(i, i)] += 1.0;
    }
    k
}

fn spd_solve(a: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a.cholesky().ok_or_else(|| RmaError::Singular("dense system is not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

/// [`LinearOracle`] quadratic exposed to the Newton-CG optimizer.
#[derive(Clone, Debug)]
pub struct OracleProblem<'a> {
    oracle: &'a LinearOracle,
    sketch: Option<&'a SketchMatrix>,
}

impl OracleProblem<'_> {
    fn gram(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        match self.sketch {
            Some(s) => s.apply_transpose(&s.apply(r)?),
            None => Ok(r.clone()),
        }
    }
}

impl NewtonProblem for OracleProblem<'_> {
    fn dim(&self) -> usize {
        self.oracle.param_dim()
    }

    fn cost(&mut self, u: &DVector<f64>) -> Result<f64> {
        self.oracle.cost(u, self.sketch)
    }

    fn gradient(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), u.len())?;
        let o = self.oracle;
        Ok(&o.precision * (u - &o.u0) - o.jacobian.tr_mul(&self.gram(&o.misfit(u))?))
    }

    fn hessian_action(&mut self, _u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), v.len())?;
        let o = self.oracle;
        Ok(&o.precision * v + o.jacobian.tr_mul(&self.gram(&(&o.jacobian * v))?))
    }

    fn precondition(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        let o = self.oracle;
        Ok(&o.sqrt_cov * o.sqrt_cov.tr_mul(r))
    }
}
