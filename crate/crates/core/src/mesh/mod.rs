//! Simplicial triangulations of boxes.
//!
//! The canonical mesh is the Kuhn (Freudenthal) subdivision of an
//! axis-aligned grid whose lines pass through the origin, so the origin is
//! always a vertex. Every simplex lists its vertices so that the origin, when
//! present, sits at position 0.

mod kuhn;
mod refine;
mod region;
mod validate;

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::expr::Interval;

pub use kuhn::{fan_triangulate, kuhn_triangulate, split_lines, tensor_triangulate, uniform_lines};
pub use region::{shell_indices, Region};
pub use validate::Diagnostic;

/// Geometric tolerance for containment tests.
pub const GEO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("box and grid dimensions disagree ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("degenerate box on axis {axis}: [{lo}, {hi}]")]
    DegenerateBox { axis: usize, lo: f64, hi: f64 },
    #[error("grid lines on axis {axis} do not pass through 0")]
    OriginNotOnGrid { axis: usize },
    #[error("point {0:?} is outside the triangulated domain")]
    OutsideDomain(Vec<f64>),
    #[error("point {point:?} is outside simplex {simplex}")]
    OutsideSimplex { simplex: usize, point: Vec<f64> },
    #[error("region is not a union of whole simplexes: {0}")]
    NotAUnion(String),
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct Simplex {
    pub vertices: Vec<usize>,
    /// Row `j-1` is `x_j - x_0`.
    pub x_mat: DMatrix<f64>,
    /// `None` when the vertices are affinely dependent.
    pub x_inv: Option<DMatrix<f64>>,
    pub volume: f64,
}

impl Simplex {
    fn build(vertices: Vec<usize>, coords: &[Vec<f64>]) -> Self {
        let n = vertices.len().saturating_sub(1);
        let x0 = &coords[vertices[0]];
        let mut x_mat = DMatrix::zeros(n, n);
        for (j, &v) in vertices.iter().enumerate().skip(1) {
            for d in 0..n {
                x_mat[(j - 1, d)] = coords[v][d] - x0[d];
            }
        }
        let det = x_mat.determinant();
        let scale = x_mat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let x_inv = if det.abs() > 1e-12 * scale.powi(n as i32) {
            x_mat.clone().try_inverse()
        } else {
            None
        };
        let volume = det.abs() / factorial(n);
        Simplex {
            vertices,
            x_mat,
            x_inv,
            volume,
        }
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Uniform bucket grid over the bounding box for point location.
#[derive(Debug, Clone)]
struct Buckets {
    dims: Vec<usize>,
    buckets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    n: usize,
    vertices: Vec<Vec<f64>>,
    simplices: Vec<Simplex>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lines: Option<Vec<Vec<f64>>>,
    fan: Option<usize>,
    tags: BTreeMap<String, Vec<usize>>,
    facets: HashMap<Vec<usize>, Vec<usize>>,
    buckets: Buckets,
}

/// Serialized mesh layout; vertex order is the canonical index space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshFile {
    pub n: usize,
    pub vertices: Vec<Vec<f64>>,
    pub simplexes: Vec<Vec<usize>>,
    #[serde(default)]
    pub tags: BTreeMap<String, Vec<usize>>,
    /// Grid lines per axis for meshes built on a rectilinear grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<Vec<Vec<f64>>>,
    /// Half-width, in grid cells, of the cube around the origin triangulated as a fan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan: Option<usize>,
}

impl Triangulation {
    /// Builds caches without checking the mesh; see [`Triangulation::validate`].
    pub fn from_parts(
        vertices: Vec<Vec<f64>>,
        simplexes: Vec<Vec<usize>>,
        tags: BTreeMap<String, Vec<usize>>,
        lines: Option<Vec<Vec<f64>>>,
    ) -> Result<Self, MeshError> {
        let n = vertices.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(MeshError::Invalid("mesh has no vertices".into()));
        }
        if let Some(v) = vertices.iter().find(|v| v.len() != n || v.iter().any(|c| !c.is_finite())) {
            return Err(MeshError::Invalid(format!("bad vertex coordinates {v:?}")));
        }
        for (i, s) in simplexes.iter().enumerate() {
            if s.len() != n + 1 || s.iter().any(|&v| v >= vertices.len()) {
                return Err(MeshError::Invalid(format!("simplex {i} has bad vertex list {s:?}")));
            }
        }
        let mut lower = vec![f64::INFINITY; n];
        let mut upper = vec![f64::NEG_INFINITY; n];
        for v in &vertices {
            for d in 0..n {
                lower[d] = lower[d].min(v[d]);
                upper[d] = upper[d].max(v[d]);
            }
        }
        let simplices: Vec<Simplex> = simplexes
            .into_iter()
            .map(|s| Simplex::build(s, &vertices))
            .collect();
        let mut facets: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
        for (i, s) in simplices.iter().enumerate() {
            for skip in 0..=n {
                facets.entry(facet_key(&s.vertices, skip)).or_default().push(i);
            }
        }
        let mut mesh = Triangulation {
            n,
            vertices,
            simplices,
            lower,
            upper,
            lines,
            fan: None,
            tags,
            facets,
            buckets: Buckets {
                dims: vec![],
                buckets: vec![],
            },
        };
        mesh.buckets = mesh.build_buckets();
        Ok(mesh)
    }

    pub fn from_file(file: MeshFile) -> Result<Self, MeshError> {
        let mut mesh = Self::from_parts(file.vertices, file.simplexes, file.tags, file.lines)?;
        mesh.fan = file.fan;
        if mesh.n != file.n {
            return Err(MeshError::Invalid(format!(
                "declared n = {} but vertices have dimension {}",
                file.n, mesh.n
            )));
        }
        Ok(mesh)
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            n: self.n,
            vertices: self.vertices.clone(),
            simplexes: self.simplices.iter().map(|s| s.vertices.clone()).collect(),
            tags: self.tags.clone(),
            lines: self.lines.clone(),
            fan: self.fan,
        }
    }

    fn build_buckets(&self) -> Buckets {
        let n = self.n;
        let dims: Vec<usize> = match self.grid() {
            Some(g) => g,
            None => {
                let per_axis = (self.simplices.len() as f64).powf(1.0 / n as f64).ceil().max(1.0);
                vec![per_axis as usize; n]
            }
        };
        let total: usize = dims.iter().product();
        let mut buckets = vec![Vec::new(); total];
        for (i, s) in self.simplices.iter().enumerate() {
            let mut lo_idx = vec![0usize; n];
            let mut hi_idx = vec![0usize; n];
            for d in 0..n {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &v in &s.vertices {
                    lo = lo.min(self.vertices[v][d]);
                    hi = hi.max(self.vertices[v][d]);
                }
                let slack = 1e-9 * (self.upper[d] - self.lower[d]).max(1.0);
                lo_idx[d] = self.bucket_coord(d, lo - slack, &dims);
                hi_idx[d] = self.bucket_coord(d, hi + slack, &dims);
            }
            for_each_multi_index(&lo_idx, &hi_idx, |idx| {
                buckets[flat_index(idx, &dims)].push(i);
            });
        }
        Buckets { dims, buckets }
    }

    fn bucket_coord(&self, d: usize, x: f64, dims: &[usize]) -> usize {
        let width = self.upper[d] - self.lower[d];
        if width <= 0.0 {
            return 0;
        }
        let t = ((x - self.lower[d]) / width * dims[d] as f64).floor();
        t.clamp(0.0, (dims[d] - 1) as f64) as usize
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_simplices(&self) -> usize {
        self.simplices.len()
    }

    pub fn vertex(&self, id: usize) -> &[f64] {
        &self.vertices[id]
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn simplex(&self, id: usize) -> &Simplex {
        &self.simplices[id]
    }

    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    /// Cells per axis for meshes built on a rectilinear grid.
    pub fn grid(&self) -> Option<Vec<usize>> {
        self.lines.as_ref().map(|l| l.iter().map(|a| a.len() - 1).collect())
    }

    pub fn lines(&self) -> Option<&[Vec<f64>]> {
        self.lines.as_deref()
    }

    /// Fan half-width in grid cells, for meshes built by [`fan_triangulate`].
    pub fn fan(&self) -> Option<usize> {
        self.fan
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn tags(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.tags
    }

    pub fn set_tag(&mut self, name: &str, ids: Vec<usize>) {
        self.tags.insert(name.to_string(), ids);
    }

    pub fn origin_vertex(&self) -> Option<usize> {
        self.vertices
            .iter()
            .position(|v| v.iter().all(|c| c.abs() <= 1e-12))
    }

    pub fn total_volume(&self) -> f64 {
        self.simplices.iter().map(|s| s.volume).sum()
    }

    /// Axis-aligned bounding box of a simplex as intervals.
    pub fn simplex_box(&self, id: usize) -> Vec<Interval> {
        let s = &self.simplices[id];
        (0..self.n)
            .map(|d| {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &v in &s.vertices {
                    lo = lo.min(self.vertices[v][d]);
                    hi = hi.max(self.vertices[v][d]);
                }
                Interval::new(lo, hi)
            })
            .collect()
    }

    pub fn centroid(&self, id: usize) -> Vec<f64> {
        let s = &self.simplices[id];
        let mut c = vec![0.0; self.n];
        for &v in &s.vertices {
            for d in 0..self.n {
                c[d] += self.vertices[v][d];
            }
        }
        let k = s.vertices.len() as f64;
        c.iter_mut().for_each(|x| *x /= k);
        c
    }

    /// Barycentric coordinates of `x` in simplex `id`, without a containment check.
    pub fn barycentric_unchecked(&self, id: usize, x: &[f64]) -> Vec<f64> {
        let s = &self.simplices[id];
        let x0 = &self.vertices[s.vertices[0]];
        let rel = DVector::from_iterator(self.n, (0..self.n).map(|d| x[d] - x0[d]));
        let Some(inv) = &s.x_inv else {
            return vec![f64::NAN; self.n + 1];
        };
        let tail = inv.transpose() * rel;
        let mut lambda = Vec::with_capacity(self.n + 1);
        lambda.push(1.0 - tail.sum());
        lambda.extend(tail.iter());
        lambda
    }

    pub fn barycentric(&self, id: usize, x: &[f64]) -> Result<Vec<f64>, MeshError> {
        let lambda = self.barycentric_unchecked(id, x);
        if lambda.iter().all(|&l| l >= -GEO_TOL && l <= 1.0 + GEO_TOL) {
            Ok(lambda)
        } else {
            Err(MeshError::OutsideSimplex {
                simplex: id,
                point: x.to_vec(),
            })
        }
    }

    pub fn contains(&self, id: usize, x: &[f64]) -> bool {
        self.barycentric_unchecked(id, x)
            .iter()
            .all(|&l| l >= -GEO_TOL)
    }

    /// Lowest-id simplex containing `x`.
    pub fn locate(&self, x: &[f64]) -> Result<usize, MeshError> {
        if x.len() != self.n {
            return Err(MeshError::OutsideDomain(x.to_vec()));
        }
        for d in 0..self.n {
            let tol = GEO_TOL * (self.upper[d] - self.lower[d]).max(1.0);
            if !(x[d] >= self.lower[d] - tol && x[d] <= self.upper[d] + tol) {
                return Err(MeshError::OutsideDomain(x.to_vec()));
            }
        }
        let idx: Vec<usize> = (0..self.n)
            .map(|d| self.bucket_coord(d, x[d], &self.buckets.dims))
            .collect();
        let bucket = &self.buckets.buckets[flat_index(&idx, &self.buckets.dims)];
        if let Some(id) = bucket.iter().copied().filter(|&i| self.contains(i, x)).min() {
            return Ok(id);
        }
        (0..self.simplices.len())
            .find(|&i| self.contains(i, x))
            .ok_or_else(|| MeshError::OutsideDomain(x.to_vec()))
    }

    /// All simplexes containing `x` (several when `x` lies on a shared face).
    pub fn simplices_containing(&self, x: &[f64]) -> Vec<usize> {
        let Ok(first) = self.locate(x) else {
            return Vec::new();
        };
        let idx: Vec<usize> = (0..self.n)
            .map(|d| self.bucket_coord(d, x[d], &self.buckets.dims))
            .collect();
        let mut out: Vec<usize> = self.buckets.buckets[flat_index(&idx, &self.buckets.dims)]
            .iter()
            .copied()
            .filter(|&i| self.contains(i, x))
            .collect();
        if !out.contains(&first) {
            out.push(first);
        }
        out.sort_unstable();
        out
    }

    /// Simplexes sharing a facet with `id`, in increasing order.
    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        let s = &self.simplices[id];
        let mut out: Vec<usize> = (0..=self.n)
            .flat_map(|skip| self.facets[&facet_key(&s.vertices, skip)].iter().copied())
            .filter(|&j| j != id)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub(crate) fn facet_map(&self) -> &HashMap<Vec<usize>, Vec<usize>> {
        &self.facets
    }

    /// Whether every vertex of the facet lies on one face of the bounding box.
    pub(crate) fn facet_on_box_boundary(&self, facet: &[usize]) -> bool {
        (0..self.n).any(|d| {
            let tol = GEO_TOL * (self.upper[d] - self.lower[d]).max(1.0);
            facet.iter().all(|&v| (self.vertices[v][d] - self.lower[d]).abs() <= tol)
                || facet.iter().all(|&v| (self.vertices[v][d] - self.upper[d]).abs() <= tol)
        })
    }

    /// Problems that make the mesh unusable; empty when valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        validate::validate(self)
    }

    /// Uniform refinement: grid halving for Kuhn meshes, one bisection per simplex otherwise.
    pub fn refine_all(&self) -> Result<Triangulation, MeshError> {
        refine::refine_all(self)
    }

    /// Bisects the longest edge of each selected simplex, splitting every simplex
    /// sharing that edge so the mesh stays conforming.
    pub fn refine_selected(&self, which: &[usize]) -> Result<Triangulation, MeshError> {
        refine::refine_selected(self, which)
    }
}

fn facet_key(vertices: &[usize], skip: usize) -> Vec<usize> {
    let mut key: Vec<usize> = vertices
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != skip)
        .map(|(_, v)| *v)
        .collect();
    key.sort_unstable();
    key
}

fn flat_index(idx: &[usize], dims: &[usize]) -> usize {
    let mut flat = 0;
    let mut stride = 1;
    for (i, d) in idx.iter().zip(dims) {
        flat += i * stride;
        stride *= d;
    }
    flat
}

/// Calls `f` for every multi-index between `lo` and `hi` inclusive, first axis fastest.
pub(crate) fn for_each_multi_index(lo: &[usize], hi: &[usize], mut f: impl FnMut(&[usize])) {
    let mut idx = lo.to_vec();
    loop {
        f(&idx);
        let mut d = 0;
        loop {
            if d == idx.len() {
                return;
            }
            if idx[d] < hi[d] {
                idx[d] += 1;
                break;
            }
            idx[d] = lo[d];
            d += 1;
        }
    }
}

impl Serialize for Triangulation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Triangulation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = MeshFile::deserialize(deserializer)?;
        Triangulation::from_file(file).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn unit_simplex() -> Triangulation {
        Triangulation::from_parts(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0, 1, 2]],
            BTreeMap::new(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn barycentric_examples() {
        let t = unit_simplex();
        let c = t.barycentric(0, &[1.0 / 3.0, 1.0 / 3.0]).unwrap();
        for l in &c {
            assert!((l - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(t.barycentric(0, &[0.0, 1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        let l = t.barycentric(0, &[0.25, 0.25]).unwrap();
        assert_eq!(l, vec![0.5, 0.25, 0.25]);
        assert!(matches!(
            t.barycentric(0, &[0.8, 0.8]),
            Err(MeshError::OutsideSimplex { .. })
        ));
    }

    #[test]
    fn x_times_inverse_is_identity() {
        let t = kuhn_triangulate(&[(-1.5, 1.5), (-1.0, 2.0)], &[6, 3]).unwrap();
        for s in t.simplices() {
            let prod = &s.x_mat * s.x_inv.as_ref().unwrap();
            assert!((prod - DMatrix::identity(2, 2)).amax() < 1e-10);
        }
    }

    #[test]
    fn locate_examples() {
        let t = kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[2, 2]).unwrap();
        let id = t.locate(&[0.0, 0.0]).unwrap();
        assert_eq!(t.vertex(t.simplex(id).vertices[0]), &[0.0, 0.0]);

        // brute-force oracle: lowest id whose barycentric coordinates are all nonnegative
        let oracle = |x: &[f64]| {
            (0..t.num_simplices())
                .find(|&i| t.barycentric_unchecked(i, x).iter().all(|&l| l >= -GEO_TOL))
                .unwrap()
        };
        let interior = [0.6, 0.2];
        assert_eq!(t.locate(&interior).unwrap(), oracle(&interior));
        assert_eq!(t.simplices_containing(&interior).len(), 1);
        let on_face = [0.5, 0.5];
        let sharers = t.simplices_containing(&on_face);
        assert_eq!(sharers.len(), 2);
        assert_eq!(t.locate(&on_face).unwrap(), sharers[0]);
        assert_eq!(t.locate(&on_face).unwrap(), oracle(&on_face));
        assert!(matches!(
            t.locate(&[1.5, 0.0]),
            Err(MeshError::OutsideDomain(_))
        ));
    }

    #[test]
    fn partition_of_unity_reconstruction() {
        let t = kuhn_triangulate(&[(-1.5, 1.5), (-1.5, 1.5)], &[10, 10]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let x = [rng.gen_range(-1.5..=1.5), rng.gen_range(-1.5..=1.5)];
            let id = t.locate(&x).unwrap();
            let l = t.barycentric(id, &x).unwrap();
            assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut rec = [0.0; 2];
            for (j, &v) in t.simplex(id).vertices.iter().enumerate() {
                rec[0] += l[j] * t.vertex(v)[0];
                rec[1] += l[j] * t.vertex(v)[1];
            }
            assert!((rec[0] - x[0]).abs() < 1e-9 && (rec[1] - x[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip() {
        let t = kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[2, 2]).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        let back: Triangulation = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_file(), t.to_file());
        assert!(back.validate().is_empty());
    }
}
