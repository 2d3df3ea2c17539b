//! Structured simplicial meshes on the unit interval and the unit square.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmaError};

/// A side of the unit interval (`Left`/`Right`) or unit square (all four).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Boundary condition carried by a facet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    /// Unit inflow flux.
    Flux,
    /// Robin (Biot) exchange.
    Robin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryFacet {
    /// One node in 1D, two in 2D.
    pub nodes: Vec<usize>,
    pub tag: BoundaryTag,
    pub measure: f64,
}

/// Conforming P1 mesh with precomputed reference-free element matrices.
#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    coords: Vec<[f64; 2]>,
    /// Flat connectivity, `dim + 1` vertices per element.
    elements: Vec<usize>,
    facets: Vec<BoundaryFacet>,
    measures: Vec<f64>,
    /// Row-major `(dim+1)^2` stiffness block per element, unit coefficient.
    stiffness: Vec<f64>,
}

impl Mesh {
    /// Uniform mesh of `[0, 1]` with `cells` intervals; `flux_side` carries the inflow flux.
    pub fn interval(cells: usize, flux_side: Side) -> Result<Self> {
        if cells == 0 {
            return Err(RmaError::InvalidDimension("interval mesh needs at least one cell".into()));
        }
        let (flux_node, robin_node) = match flux_side {
            Side::Left => (0, cells),
            Side::Right => (cells, 0),
            other => {
                return Err(RmaError::InvalidParameter(format!(
                    "side {other:?} does not exist on an interval"
                )))
            }
        };
        let h = 1.0 / cells as f64;
        let coords = (0..=cells).map(|i| [i as f64 * h, 0.0]).collect();
        let elements = (0..cells).flat_map(|i| [i, i + 1]).collect();
        let facets = vec![
            BoundaryFacet { nodes: vec![flux_node], tag: BoundaryTag::Flux, measure: 1.0 },
            BoundaryFacet { nodes: vec![robin_node], tag: BoundaryTag::Robin, measure: 1.0 },
        ];
        Ok(Self::from_parts(1, coords, elements, facets))
    }

    /// Unit square split into `cells_x * cells_y` rectangles, each cut along
    /// its lower-left to upper-right diagonal. Nodes are numbered x-fastest.
    pub fn unit_square(cells_x: usize, cells_y: usize, flux_side: Side) -> Result<Self> {
        if cells_x == 0 || cells_y == 0 {
            return Err(RmaError::InvalidDimension("square mesh needs at least one cell".into()));
        }
        let nx = cells_x + 1;
        let idx = |i: usize, j: usize| i + j * nx;
        let (hx, hy) = (1.0 / cells_x as f64, 1.0 / cells_y as f64);
        let mut coords = Vec::with_capacity(nx * (cells_y + 1));
        for j in 0..=cells_y {
            for i in 0..=cells_x {
                coords.push([i as f64 * hx, j as f64 * hy]);
            }
        }
        let mut elements = Vec::with_capacity(6 * cells_x * cells_y);
        for j in 0..cells_y {
            for i in 0..cells_x {
                let (p00, p10, p01, p11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                elements.extend([p00, p10, p11, p00, p11, p01]);
            }
        }
        let tag = |side: Side| {
            if side == flux_side {
                BoundaryTag::Flux
            } else {
                BoundaryTag::Robin
            }
        };
        let mut facets = Vec::with_capacity(2 * (cells_x + cells_y));
        for i in 0..cells_x {
            facets.push(BoundaryFacet { nodes: vec![idx(i, 0), idx(i + 1, 0)], tag: tag(Side::Bottom), measure: hx });
            facets.push(BoundaryFacet {
                nodes: vec![idx(i, cells_y), idx(i + 1, cells_y)],
                tag: tag(Side::Top),
                measure: hx,
            });
        }
        for j in 0..cells_y {
            facets.push(BoundaryFacet { nodes: vec![idx(0, j), idx(0, j + 1)], tag: tag(Side::Left), measure: hy });
            facets.push(BoundaryFacet {
                nodes: vec![idx(cells_x, j), idx(cells_x, j + 1)],
                tag: tag(Side::Right),
                measure: hy,
            });
        }
        Ok(Self::from_parts(2, coords, elements, facets))
    }

    fn from_parts(
        dim: usize,
        coords: Vec<[f64; 2]>,
        elements: Vec<usize>,
        facets: Vec<BoundaryFacet>,
    ) -> Self {
        let nv = dim + 1;
        let ne = elements.len() / nv;
        let mut measures = Vec::with_capacity(ne);
        let mut stiffness = Vec::with_capacity(ne * nv * nv);
        for e in 0..ne {
            let verts = &elements[e * nv..(e + 1) * nv];
            if dim == 1 {
                let h = coords[verts[1]][0] - coords[verts[0]][0];
                measures.push(h);
                let k = 1.0 / h;
                stiffness.extend([k, -k, -k, k]);
            } else {
                let [a, b, c] = [coords[verts[0]], coords[verts[1]], coords[verts[2]]];
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                let area = 0.5 * det.abs();
                measures.push(area);
                // Gradients of the barycentric coordinates, scaled by 2*area.
                let grads = [
                    [b[1] - c[1], c[0] - b[0]],
                    [c[1] - a[1], a[0] - c[0]],
                    [a[1] - b[1], b[0] - a[0]],
                ];
                for gi in &grads {
                    for gj in &grads {
                        stiffness.push((gi[0] * gj[0] + gi[1] * gj[1]) / (4.0 * area));
                    }
                }
            }
        }
        Self { dim, coords, elements, facets, measures, stiffness }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn element_count(&self) -> usize {
        self.measures.len()
    }

    pub fn vertices_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elements[e * nv..(e + 1) * nv]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.elements.chunks_exact(self.dim + 1)
    }

    pub fn facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    /// Length (1D) or area (2D) of element `e`.
    pub fn element_measure(&self, e: usize) -> f64 {
        self.measures[e]
    }

    /// Unit-coefficient P1 stiffness block of element `e`, row-major.
    pub fn element_stiffness(&self, e: usize) -> &[f64] {
        let nv2 = (self.dim + 1) * (self.dim + 1);
        &self.stiffness[e * nv2..(e + 1) * nv2]
    }

    /// Consistent P1 mass block of element `e`, row-major.
    pub fn element_mass(&self, e: usize) -> Vec<f64> {
        let nv = self.dim + 1;
        let scale = self.measures[e] / ((nv * (nv + 1)) as f64);
        (0..nv * nv).map(|k| if k / nv == k % nv { 2.0 * scale } else { scale }).collect()
    }

    /// Sorted nodes lying on some boundary facet.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self.facets.iter().flat_map(|f| f.nodes.iter().copied()).collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    /// Nodal interpolation of a function of the coordinates.
    pub fn interpolate(&self, f: impl Fn(&[f64; 2]) -> f64) -> Vec<f64> {
        self.coords.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_layout() {
        let mesh = Mesh::interval(4, Side::Left).unwrap();
        assert_eq!(mesh.node_count(), 5);
        assert_eq!(mesh.element_count(), 4);
        assert_eq!(mesh.element(2), &[2, 3]);
        assert_eq!(mesh.facets()[0].nodes, vec![0]);
        assert_eq!(mesh.facets()[0].tag, BoundaryTag::Flux);
        assert_eq!(mesh.boundary_nodes(), vec![0, 4]);
        assert!(Mesh::interval(4, Side::Top).is_err());
        assert!(Mesh::interval(0, Side::Left).is_err());
    }

    #[test]
    fn square_layout_and_tags() {
        let mesh = Mesh::unit_square(3, 2, Side::Bottom).unwrap();
        assert_eq!(mesh.node_count(), 12);
        assert_eq!(mesh.element_count(), 12);
        let total: f64 = (0..mesh.element_count()).map(|e| mesh.element_measure(e)).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
        let flux_len: f64 =
            mesh.facets().iter().filter(|f| f.tag == BoundaryTag::Flux).map(|f| f.measure).sum();
        assert_relative_eq!(flux_len, 1.0, epsilon = 1e-14);
        let perimeter: f64 = mesh.facets().iter().map(|f| f.measure).sum();
        assert_relative_eq!(perimeter, 4.0, epsilon = 1e-14);
        assert_eq!(mesh.boundary_nodes().len(), 10);
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let mesh = Mesh::unit_square(4, 4, Side::Bottom).unwrap();
        for e in 0..mesh.element_count() {
            let k = mesh.element_stiffness(e);
            for row in k.chunks(3) {
                assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_blocks_integrate_measure() {
        let mesh = Mesh::unit_square(2, 3, Side::Left).unwrap();
        for e in 0..mesh.element_count() {
            let total: f64 = mesh.element_mass(e).iter().sum();
            assert_relative_eq!(total, mesh.element_measure(e), epsilon = 1e-14);
        }
    }
}
