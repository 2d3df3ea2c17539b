//! Steady heat conduction with log-conductivity `u`:
//!
//! ```text
//!   -div(e^u grad w) = 0         in the domain
//!   -e^u grad w . n  = Bi w      on the Robin boundary
//!   -e^u grad w . n  = -1        on the flux boundary
//! ```
//!
//! discretized with P1 elements and a one-point rule for `e^u` on each
//! element. Every forward, adjoint and incremental solve bumps a counter.

pub mod mesh;

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::CscMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, RmaError};
use crate::linalg::{FemPattern, SpdSolver};
pub use mesh::{BoundaryFacet, BoundaryTag, Mesh, Side};

/// Default Biot number.
pub const DEFAULT_BIOT: f64 = 0.1;

/// Which nodes are observed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMask {
    #[default]
    All,
    Boundary,
}

/// PDE-solve tallies by kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounts {
    pub forward: u64,
    pub adjoint: u64,
    pub incremental: u64,
}

impl SolveCounts {
    pub fn total(&self) -> u64 {
        self.forward + self.adjoint + self.incremental
    }

    /// Componentwise `self - earlier`.
    pub fn since(&self, earlier: &SolveCounts) -> SolveCounts {
        SolveCounts {
            forward: self.forward - earlier.forward,
            adjoint: self.adjoint - earlier.adjoint,
            incremental: self.incremental - earlier.incremental,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct FactorCache {
    key: Option<DVector<f64>>,
    solver: Option<SpdSolver>,
}

/// Discrete forward model with an observation operator and a solve counter.
///
/// Counters and the factorization cache use interior mutability, so one
/// instance must stay on one thread; clone it for parallel trials.
#[derive(Clone, Debug)]
pub struct ForwardProblem {
    mesh: Arc<Mesh>,
    biot: f64,
    mask: Vec<bool>,
    observed: Vec<usize>,
    pattern: FemPattern,
    load: DVector<f64>,
    counts: Cell<SolveCounts>,
    cache: RefCell<FactorCache>,
}

impl ForwardProblem {
    pub fn new(mesh: Arc<Mesh>, biot: f64) -> Result<Self> {
        if !(biot > 0.0 && biot.is_finite()) {
            return Err(RmaError::InvalidParameter(format!("Biot number must be > 0, got {biot}")));
        }
        let n = mesh.node_count();
        if n < 2 {
            return Err(RmaError::InvalidDimension("mesh needs at least two nodes".into()));
        }
        let mut load = DVector::zeros(n);
        for facet in mesh.facets().iter().filter(|f| f.tag == BoundaryTag::Flux) {
            let share = facet.measure / facet.nodes.len() as f64;
            for &node in &facet.nodes {
                load[node] += share;
            }
        }
        let pattern = FemPattern::new(&mesh);
        Ok(Self {
            mask: vec![true; n],
            observed: (0..n).collect(),
            pattern,
            load,
            biot,
            mesh,
            counts: Cell::new(SolveCounts::default()),
            cache: RefCell::new(FactorCache::default()),
        })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        check_len(self.mesh.node_count(), mask.len())?;
        let observed: Vec<usize> = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
        if observed.is_empty() {
            return Err(RmaError::InvalidParameter("observation mask selects no nodes".into()));
        }
        self.mask = mask;
        self.observed = observed;
        Ok(self)
    }

    pub fn with_observation(self, which: ObservationMask) -> Result<Self> {
        let n = self.mesh.node_count();
        let mask = match which {
            ObservationMask::All => vec![true; n],
            ObservationMask::Boundary => {
                let mut mask = vec![false; n];
                for i in self.mesh.boundary_nodes() {
                    mask[i] = true;
                }
                mask
            }
        };
        self.with_mask(mask)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn biot(&self) -> f64 {
        self.biot
    }

    pub fn node_count(&self) -> usize {
        self.mesh.node_count()
    }

    /// Number of observations `N`.
    pub fn observation_count(&self) -> usize {
        self.observed.len()
    }

    pub fn observed_nodes(&self) -> &[usize] {
        &self.observed
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn solve_counts(&self) -> SolveCounts {
        self.counts.get()
    }

    fn bump(&self, f: impl FnOnce(&mut SolveCounts)) {
        let mut c = self.counts.get();
        f(&mut c);
        self.counts.set(c);
    }

    /// `e^u` at each element's midpoint (vertex average of `u`).
    pub fn element_coefficients(&self, u: &DVector<f64>) -> Result<Vec<f64>> {
        check_len(self.mesh.node_count(), u.len())?;
        let nv = self.mesh.vertices_per_element() as f64;
        Ok(self.mesh.elements().map(|verts| (verts.iter().map(|&i| u[i]).sum::<f64>() / nv).exp()).collect())
    }

    fn stiffness_values(&self, u: &DVector<f64>) -> Result<Vec<f64>> {
        let kappa = self.element_coefficients(u)?;
        Ok(self.pattern.assemble_values(&self.mesh, |e| kappa[e], 0.0, self.biot))
    }

    /// Stiffness `K(u)` (diffusion plus Robin terms) and flux load `f`.
    pub fn assemble(&self, u: &DVector<f64>) -> Result<(CscMatrix<f64>, DVector<f64>)> {
        let values = self.stiffness_values(u)?;
        Ok((self.pattern.matrix(values), self.load.clone()))
    }

    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    /// Runs `f` with a factorization of `K(u)`, reusing the last one when `u` is unchanged.
    fn with_factor<R>(&self, u: &DVector<f64>, f: impl FnOnce(&SpdSolver) -> R) -> Result<R> {
        let mut cache = self.cache.borrow_mut();
        let fresh = cache.key.as_ref().is_some_and(|k| k == u);
        if !fresh {
            let values = self.stiffness_values(u)?;
            match cache.solver.as_mut() {
                Some(solver) => solver.refactor(&values)?,
                None => cache.solver = Some(SpdSolver::new(&self.pattern.matrix(values))?),
            }
            cache.key = Some(u.clone());
        }
        Ok(f(cache.solver.as_ref().expect("factor present")))
    }

    /// State `w` with `K(u) w = f`.
    pub fn solve_forward(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.with_factor(u, |s| s.solve(&self.load))?;
        self.bump(|c| c.forward += 1);
        Ok(w)
    }

    /// Restriction of nodal values to the observed nodes.
    pub fn observe(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.observed.len(), self.observed.iter().map(|&i| w[i]))
    }

    /// Transpose of [`observe`](Self::observe): zero-fill unobserved nodes.
    pub fn scatter(&self, obs: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.observed.len(), obs.len())?;
        let mut out = DVector::zeros(self.mesh.node_count());
        for (&i, v) in self.observed.iter().zip(obs.iter()) {
            out[i] = *v;
        }
        Ok(out)
    }

    /// Adjoint `p` with `K(u) p = -B^T rhs`. `K` is symmetric, so this reuses the forward factor.
    pub fn solve_adjoint(&self, u: &DVector<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let b = -self.scatter(rhs)?;
        let p = self.with_factor(u, |s| s.solve(&b))?;
        self.bump(|c| c.adjoint += 1);
        Ok(p)
    }

    /// `C(w) du`, the derivative of `K(u) w` in direction `du`.
    pub fn linearized_operator(&self, u: &DVector<f64>, w: &DVector<f64>, du: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.mesh.node_count(), w.len())?;
        check_len(self.mesh.node_count(), du.len())?;
        let kappa = self.element_coefficients(u)?;
        let nv = self.mesh.vertices_per_element();
        let mut out = DVector::zeros(self.mesh.node_count());
        for (e, verts) in self.mesh.elements().enumerate() {
            let scale = kappa[e] * verts.iter().map(|&i| du[i]).sum::<f64>() / nv as f64;
            if scale == 0.0 {
                continue;
            }
            let k = self.mesh.element_stiffness(e);
            for (a, &ia) in verts.iter().enumerate() {
                let kw: f64 = verts.iter().enumerate().map(|(b, &ib)| k[a * nv + b] * w[ib]).sum();
                out[ia] += scale * kw;
            }
        }
        Ok(out)
    }

    /// `C(w)^T p`.
    pub fn linearized_operator_transpose(
        &self,
        u: &DVector<f64>,
        w: &DVector<f64>,
        p: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_len(self.mesh.node_count(), w.len())?;
        check_len(self.mesh.node_count(), p.len())?;
        let kappa = self.element_coefficients(u)?;
        let nv = self.mesh.vertices_per_element();
        let mut out = DVector::zeros(self.mesh.node_count());
        for (e, verts) in self.mesh.elements().enumerate() {
            let k = self.mesh.element_stiffness(e);
            let mut pkw = 0.0;
            for (a, &ia) in verts.iter().enumerate() {
                for (b, &ib) in verts.iter().enumerate() {
                    pkw += p[ia] * k[a * nv + b] * w[ib];
                }
            }
            let share = kappa[e] * pkw / nv as f64;
            for &i in verts {
                out[i] += share;
            }
        }
        Ok(out)
    }

    /// Derivative of the observations in direction `du`: one incremental solve.
    ///
    /// `w` must be the forward state at `u`; a stale state is not detected.
    pub fn jacobian_action(&self, u: &DVector<f64>, w: &DVector<f64>, du: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = -self.linearized_operator(u, w, du)?;
        let dw = self.with_factor(u, |s| s.solve(&rhs))?;
        self.bump(|c| c.incremental += 1);
        Ok(self.observe(&dw))
    }

    /// Transpose of [`jacobian_action`](Self::jacobian_action): one incremental solve.
    pub fn jacobian_transpose_action(
        &self,
        u: &DVector<f64>,
        w: &DVector<f64>,
        dd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let b = self.scatter(dd)?;
        let lambda = self.with_factor(u, |s| s.solve(&b))?;
        self.bump(|c| c.incremental += 1);
        Ok(-self.linearized_operator_transpose(u, w, &lambda)?)
    }

    /// Parameter-to-observable map `F(u)`: one forward solve.
    pub fn forward_map(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.observe(&self.solve_forward(u)?))
    }
}
