//! Sparse FEM assembly on a fixed pattern and sparse Cholesky solves.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Result, RmaError};
use crate::pde::mesh::{BoundaryTag, Mesh};

/// Sparsity pattern of P1 operators on a mesh, with the value slot of every
/// local element and boundary-facet entry precomputed.
#[derive(Clone, Debug)]
pub(crate) struct FemPattern {
    pattern: SparsityPattern,
    /// `nv^2` slots per element, row-major local order.
    element_slots: Vec<usize>,
    /// `k^2` slots per facet, `k` = nodes per facet.
    facet_slots: Vec<Vec<usize>>,
}

impl FemPattern {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.node_count();
        let mut coo = CooMatrix::new(n, n);
        for verts in mesh.elements() {
            for &a in verts {
                for &b in verts {
                    coo.push(a, b, 0.0);
                }
            }
        }
        let pattern = CscMatrix::from(&coo).pattern().clone();
        let slot = |row: usize, col: usize| -> usize {
            let offsets = pattern.major_offsets();
            let rows = &pattern.minor_indices()[offsets[col]..offsets[col + 1]];
            offsets[col] + rows.binary_search(&row).expect("entry present in FEM pattern")
        };
        let mut element_slots = Vec::new();
        for verts in mesh.elements() {
            for &a in verts {
                for &b in verts {
                    element_slots.push(slot(a, b));
                }
            }
        }
        let facet_slots = mesh
            .facets()
            .iter()
            .map(|f| f.nodes.iter().flat_map(|&a| f.nodes.iter().map(move |&b| (a, b))).map(|(a, b)| slot(a, b)).collect())
            .collect();
        Self { pattern, element_slots, facet_slots }
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    /// Values of `sum_e k_e * K_e + mass_coef * M + robin_coef * M_robin`,
    /// where `k_e` comes from `stiff_coef(e)` and `M_robin` is the boundary
    /// mass over Robin facets.
    pub fn assemble_values(
        &self,
        mesh: &Mesh,
        stiff_coef: impl Fn(usize) -> f64,
        mass_coef: f64,
        robin_coef: f64,
    ) -> Vec<f64> {
        let mut values = vec![0.0; self.nnz()];
        let nv = mesh.vertices_per_element();
        let nv2 = nv * nv;
        for e in 0..mesh.element_count() {
            let slots = &self.element_slots[e * nv2..(e + 1) * nv2];
            let k = stiff_coef(e);
            for (slot, s) in slots.iter().zip(mesh.element_stiffness(e)) {
                values[*slot] += k * s;
            }
            if mass_coef != 0.0 {
                for (slot, m) in slots.iter().zip(mesh.element_mass(e)) {
                    values[*slot] += mass_coef * m;
                }
            }
        }
        if robin_coef != 0.0 {
            for (facet, slots) in mesh.facets().iter().zip(&self.facet_slots) {
                if facet.tag != BoundaryTag::Robin {
                    continue;
                }
                for (slot, m) in slots.iter().zip(facet_mass(facet.nodes.len(), facet.measure)) {
                    values[*slot] += robin_coef * m;
                }
            }
        }
        values
    }

    pub fn matrix(&self, values: Vec<f64>) -> CscMatrix<f64> {
        CscMatrix::try_from_pattern_and_values(self.pattern.clone(), values)
            .expect("value count matches pattern")
    }
}

/// Consistent boundary mass block: `[1]` at a point, `L/6 [[2,1],[1,2]]` on an edge.
fn facet_mass(nodes: usize, measure: f64) -> Vec<f64> {
    match nodes {
        1 => vec![measure],
        _ => {
            let s = measure / 6.0;
            vec![2.0 * s, s, s, 2.0 * s]
        }
    }
}

/// Cholesky factorization of a sparse SPD matrix.
pub(crate) struct SpdSolver {
    factor: CscCholesky<f64>,
}

impl SpdSolver {
    pub fn new(matrix: &CscMatrix<f64>) -> Result<Self> {
        let factor = CscCholesky::factor(matrix)
            .map_err(|e| RmaError::Singular(format!("sparse Cholesky failed: {e:?}")))?;
        Ok(Self { factor })
    }

    pub fn refactor(&mut self, values: &[f64]) -> Result<()> {
        self.factor
            .refactor(values)
            .map_err(|e| RmaError::Singular(format!("sparse Cholesky failed: {e:?}")))
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = rhs.clone();
        self.factor.solve_mut(&mut x);
        x
    }

    /// Solves for every column of `rhs`.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = rhs.clone();
        self.factor.solve_mut(&mut x);
        x
    }
}

impl Clone for SpdSolver {
    fn clone(&self) -> Self {
        Self { factor: self.factor.clone() }
    }
}

impl std::fmt::Debug for SpdSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdSolver").field("n", &self.factor.l().nrows()).finish()
    }
}

/// `A x` for a CSC matrix.
pub(crate) fn csc_mul(a: &CscMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(a.nrows());
    for (col, xc) in x.iter().enumerate() {
        if *xc == 0.0 {
            continue;
        }
        let column = a.col(col);
        for (row, v) in column.row_indices().iter().zip(column.values()) {
            y[*row] += v * xc;
        }
    }
    y
}

pub(crate) fn csc_to_dense(a: &CscMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (row, col, v) in a.triplet_iter() {
        out[(row, col)] += v;
    }
    out
}

/// Dense Cholesky solve of an SPD system.
pub fn dense_spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| RmaError::Singular("dense matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::mesh::Side;
    use approx::assert_relative_eq;

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 10.0, 100.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert_relative_eq!(log_log_slope(&xs, &ys), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn assembled_laplacian_annihilates_constants() {
        let mesh = Mesh::unit_square(3, 3, Side::Bottom).unwrap();
        let pattern = FemPattern::new(&mesh);
        let k = pattern.matrix(pattern.assemble_values(&mesh, |_| 1.0, 0.0, 0.0));
        let y = csc_mul(&k, &DVector::from_element(mesh.node_count(), 1.0));
        assert!(y.amax() < 1e-12);
        let m = pattern.matrix(pattern.assemble_values(&mesh, |_| 0.0, 1.0, 0.0));
        let ones = DVector::from_element(mesh.node_count(), 1.0);
        assert_relative_eq!(ones.dot(&csc_mul(&m, &ones)), 1.0, epsilon = 1e-13);
        let r = pattern.matrix(pattern.assemble_values(&mesh, |_| 0.0, 0.0, 1.0));
        // Robin mass over three unit sides.
        assert_relative_eq!(ones.dot(&csc_mul(&r, &ones)), 3.0, epsilon = 1e-13);
    }

    #[test]
    fn sparse_solver_matches_dense() {
        let mesh = Mesh::unit_square(4, 3, Side::Bottom).unwrap();
        let pattern = FemPattern::new(&mesh);
        let a = pattern.matrix(pattern.assemble_values(&mesh, |e| 1.0 + e as f64 * 0.01, 0.5, 0.2));
        let b = DVector::from_fn(mesh.node_count(), |i, _| (i as f64).cos());
        let x = SpdSolver::new(&a).unwrap().solve(&b);
        let x_dense = dense_spd_solve(csc_to_dense(&a), &b).unwrap();
        assert!((x - x_dense).amax() < 1e-12);
    }
}
