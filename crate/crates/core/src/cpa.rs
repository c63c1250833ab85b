//! Continuous piecewise-affine functions on a triangulation.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DVector;

use crate::mesh::{MeshError, Region, Triangulation};

/// Relative margin between the invariant level and the smallest boundary value.
pub const LEVEL_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CpaError {
    #[error("{0}")]
    Mesh(#[from] MeshError),
    #[error("expected {expected} vertex values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("simplex {0} is degenerate")]
    Degenerate(usize),
    #[error("inner-set vertex {vertex} has value {value} >= level {level}")]
    NotContained { vertex: usize, value: f64, level: f64 },
    #[error("the region has no boundary vertices")]
    NoBoundary,
}

/// A CPA function: vertex values plus cached per-simplex gradients and offsets,
/// so that `V(x) = grad_i . x + offset_i` on simplex `i`.
#[derive(Debug, Clone)]
pub struct CpaFunction {
    mesh: Arc<Triangulation>,
    values: Vec<f64>,
    gradients: Vec<DVector<f64>>,
    offsets: Vec<f64>,
}

/// `X_i^{-1} (V(x_j) - V(x_0))_j`: the gradient of the affine interpolant on simplex `i`.
pub fn simplex_gradient(mesh: &Triangulation, i: usize, values: &[f64]) -> Result<DVector<f64>, CpaError> {
    let s = mesh.simplex(i);
    let inv = s.x_inv.as_ref().ok_or(CpaError::Degenerate(i))?;
    let v0 = values[s.vertices[0]];
    let rel = DVector::from_iterator(s.vertices.len() - 1, s.vertices[1..].iter().map(|&v| values[v] - v0));
    Ok(inv * rel)
}

impl CpaFunction {
    pub fn new(mesh: Arc<Triangulation>, values: Vec<f64>) -> Result<Self, CpaError> {
        if values.len() != mesh.num_vertices() {
            return Err(CpaError::WrongLength {
                expected: mesh.num_vertices(),
                got: values.len(),
            });
        }
        let mut gradients = Vec::with_capacity(mesh.num_simplices());
        let mut offsets = Vec::with_capacity(mesh.num_simplices());
        for i in 0..mesh.num_simplices() {
            let g = simplex_gradient(&mesh, i, &values)?;
            let x0 = mesh.vertex(mesh.simplex(i).vertices[0]);
            let v0 = values[mesh.simplex(i).vertices[0]];
            offsets.push(v0 - g.iter().zip(x0).map(|(a, b)| a * b).sum::<f64>());
            gradients.push(g);
        }
        Ok(CpaFunction {
            mesh,
            values,
            gradients,
            offsets,
        })
    }

    /// Samples `profile` at every vertex.
    pub fn from_fn(mesh: Arc<Triangulation>, profile: impl Fn(&[f64]) -> f64) -> Result<Self, CpaError> {
        let values = mesh.vertices().iter().map(|v| profile(v)).collect();
        Self::new(mesh, values)
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradient(&self, i: usize) -> &DVector<f64> {
        &self.gradients[i]
    }

    pub fn offset(&self, i: usize) -> f64 {
        self.offsets[i]
    }

    /// Value on simplex `i` of its affine piece, extended beyond the simplex.
    pub fn affine_piece(&self, i: usize, x: &[f64]) -> f64 {
        self.gradients[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.offsets[i]
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, CpaError> {
        let i = self.mesh.locate(x)?;
        Ok(self.evaluate_in(i, x))
    }

    /// Barycentric interpolation of the vertex values of simplex `i`.
    pub fn evaluate_in(&self, i: usize, x: &[f64]) -> f64 {
        let lambda = self.mesh.barycentric_unchecked(i, x);
        self.mesh
            .simplex(i)
            .vertices
            .iter()
            .zip(&lambda)
            .map(|(&v, l)| l * self.values[v])
            .sum()
    }

    /// Upper Dini derivative along `v`: the largest directional rate over the
    /// simplexes containing `x`.
    pub fn dini(&self, x: &[f64], v: &[f64]) -> Result<f64, CpaError> {
        let ids = self.mesh.simplices_containing(x);
        if ids.is_empty() {
            return Err(MeshError::OutsideDomain(x.to_vec()).into());
        }
        Ok(ids
            .iter()
            .map(|&i| self.gradients[i].iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// The level `(1 - LEVEL_MARGIN) * min` over the boundary vertices of
    /// `domain`, checked to strictly exceed every value on `inner`.
    pub fn largest_interior_sublevel(&self, domain: &Region, inner: &Region) -> Result<f64, CpaError> {
        let boundary = domain.boundary_vertices(&self.mesh);
        level_from_values(&self.values, &boundary, &inner.vertices(&self.mesh))
    }

    pub fn sublevel_membership(&self, level: f64, x: &[f64]) -> Result<bool, CpaError> {
        Ok(self.evaluate(x)? <= level)
    }
}

/// Level computation on explicit vertex sets.
pub fn level_from_values(
    values: &[f64],
    boundary: &BTreeSet<usize>,
    inner: &BTreeSet<usize>,
) -> Result<f64, CpaError> {
    let min_boundary = boundary
        .iter()
        .map(|&v| values[v])
        .fold(f64::INFINITY, f64::min);
    if !min_boundary.is_finite() {
        return Err(CpaError::NoBoundary);
    }
    let level = (1.0 - LEVEL_MARGIN) * min_boundary;
    for &v in inner {
        if values[v] >= level {
            return Err(CpaError::NotContained {
                vertex: v,
                value: values[v],
                level,
            });
        }
    }
    Ok(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::kuhn_triangulate;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeMap;

    fn unit_simplex(values: [f64; 3]) -> CpaFunction {
        let mesh = Triangulation::from_parts(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0, 1, 2]],
            BTreeMap::new(),
            None,
        )
        .unwrap();
        CpaFunction::new(Arc::new(mesh), values.to_vec()).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let f = unit_simplex([0.0, 1.0, 2.0]);
        assert_eq!(f.gradient(0).as_slice(), &[1.0, 2.0]);
        assert_eq!(unit_simplex([0.0; 3]).gradient(0).as_slice(), &[0.0, 0.0]);
        assert_eq!(unit_simplex([0.0, 1.0, 0.0]).gradient(0).as_slice(), &[1.0, 0.0]);
        assert!((f.evaluate(&[1.0 / 3.0, 1.0 / 3.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = Arc::new(kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[4, 4]).unwrap());
        let f = CpaFunction::from_fn(mesh.clone(), |x| (3.0 * x[0]).sin() + x[1] * x[1]).unwrap();
        let h = 1e-6;
        for i in 0..mesh.num_simplices() {
            let c = mesh.centroid(i);
            for d in 0..2 {
                let mut xp = c.clone();
                let mut xm = c.clone();
                xp[d] += h;
                xm[d] -= h;
                let fd = (f.evaluate_in(i, &xp) - f.evaluate_in(i, &xm)) / (2.0 * h);
                assert!((fd - f.gradient(i)[d]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn continuity_across_faces() {
        let mesh = Arc::new(kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[6, 6]).unwrap());
        let f = CpaFunction::from_fn(mesh.clone(), |x| (x[0] * x[1]).exp()).unwrap();
        for i in 0..mesh.num_simplices() {
            for j in mesh.neighbors(i) {
                let shared: Vec<usize> = mesh.simplex(i).vertices.iter().copied()
                    .filter(|v| mesh.simplex(j).vertices.contains(v))
                    .collect();
                let mid: Vec<f64> = (0..2)
                    .map(|d| shared.iter().map(|&v| mesh.vertex(v)[d]).sum::<f64>() / shared.len() as f64)
                    .collect();
                assert!((f.evaluate_in(i, &mid) - f.evaluate_in(j, &mid)).abs() < 1e-9);
                assert!((f.affine_piece(i, &mid) - f.affine_piece(j, &mid)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dini_examples() {
        let mesh = Triangulation::from_parts(
            vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![0, 1, 2], vec![3, 1, 2]],
            BTreeMap::new(),
            None,
        )
        .unwrap();
        // gradient (1,0) on the left simplex, (2,0) on the right one
        let f = CpaFunction::new(Arc::new(mesh), vec![-1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(f.gradient(0).as_slice(), &[1.0, 0.0]);
        assert_eq!(f.gradient(1).as_slice(), &[2.0, 0.0]);
        assert_eq!(f.dini(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(f.dini(&[-0.5, 0.1], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(f.dini(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        // direct limit: (f(x + h v) - f(x)) / h for small h
        let h = 1e-8;
        let direct = (f.evaluate(&[h, 0.0]).unwrap() - f.evaluate(&[0.0, 0.0]).unwrap()) / h;
        assert!((direct - 2.0).abs() < 1e-6);
    }

    #[test]
    fn level_examples() {
        let values = vec![3.0, 4.0, 5.0, 0.1, 0.2];
        let boundary = BTreeSet::from([0, 1, 2]);
        let inner = BTreeSet::from([3, 4]);
        let c = level_from_values(&values, &boundary, &inner).unwrap();
        assert_eq!(c, 3.0 * (1.0 - 1e-6));

        let mut bad = values.clone();
        bad[3] = 10.0;
        assert!(matches!(
            level_from_values(&bad, &boundary, &inner),
            Err(CpaError::NotContained { vertex: 3, .. })
        ));
        let flat = vec![1.0; 5];
        assert!(level_from_values(&flat, &boundary, &inner).is_err());
    }

    #[test]
    fn sublevel_sets_on_mesh() {
        let mesh = Arc::new(kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[4, 4]).unwrap());
        let w = CpaFunction::from_fn(mesh.clone(), |x| 0.01 + x[0] * x[0] + x[1] * x[1]).unwrap();
        let all = Region::all(&mesh);
        let inner = Region::from_box(&mesh, &[(-0.5, 0.5), (-0.5, 0.5)]).unwrap();
        let c = w.largest_interior_sublevel(&all, &inner).unwrap();
        assert!((c - 1.01 * (1.0 - 1e-6)).abs() < 1e-12);
        assert!(w.sublevel_membership(c, &[0.0, 0.0]).unwrap());
        assert!(!w.sublevel_membership(c, &[1.0, 0.0]).unwrap());
        assert!(w.sublevel_membership(0.01, &[0.0, 0.0]).unwrap());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let x = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            let level = rng.gen_range(0.0..2.0);
            assert_eq!(w.sublevel_membership(level, &x).unwrap(), w.evaluate(&x).unwrap() <= level);
        }
    }
}
