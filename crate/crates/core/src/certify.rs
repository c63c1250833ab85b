//! Vertex inequality systems for storage and barrier functions, and direct
//! (solver-free) certificate checks.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::MeshBounds;
use crate::cpa::{simplex_gradient, CpaError, CpaFunction};
use crate::expr::{EvalError, SystemModel};
use crate::mesh::{Region, Triangulation};

/// Default absolute tolerance for certificate checks.
pub const CHECK_TOL: f64 = 1e-9;

/// `f`, `h^T h` and `||G G^T||_inf` sampled at every vertex.
#[derive(Debug, Clone)]
pub struct VertexData {
    pub f: Vec<Vec<f64>>,
    pub hh: Vec<f64>,
    pub gbar: Vec<f64>,
}

impl VertexData {
    pub fn compute(sys: &SystemModel, mesh: &Triangulation) -> Result<Self, EvalError> {
        let rows = mesh
            .vertices()
            .par_iter()
            .map(|x| {
                let f = sys.eval_f(x)?;
                let h = sys.eval_h(x)?;
                Ok((f.as_slice().to_vec(), h.dot(&h), sys.gbar(x)?))
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let mut data = VertexData {
            f: Vec::with_capacity(rows.len()),
            hh: Vec::with_capacity(rows.len()),
            gbar: Vec::with_capacity(rows.len()),
        };
        for (f, hh, gbar) in rows {
            data.f.push(f);
            data.hh.push(hh);
            data.gbar.push(gbar);
        }
        Ok(data)
    }
}

/// A simplex-vertex pair `(i, j)` with `j` the position within simplex `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairValue {
    pub simplex: usize,
    pub vertex: usize,
    pub value: f64,
}

/// Everything a storage inequality system depends on besides its unknowns.
#[derive(Debug, Clone)]
pub struct StorageProblem {
    pub sys: Arc<SystemModel>,
    pub mesh: Arc<Triangulation>,
    /// Simplexes on which the inequalities are imposed.
    pub region: Region,
    pub bounds: Arc<MeshBounds>,
    pub data: Arc<VertexData>,
}

/// Unknowns of the storage system: vertex values, gradient bounds, gain and margin.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageVars {
    pub values: Vec<f64>,
    pub l: Vec<Vec<f64>>,
    pub gamma: f64,
    pub b1: f64,
}

#[derive(Debug, Clone)]
pub struct BarrierProblem {
    pub sys: Arc<SystemModel>,
    pub mesh: Arc<Triangulation>,
    /// The domain on which `W` is defined.
    pub region: Region,
    /// The inner set, exempt from the decrease condition.
    pub inner: Region,
    pub bounds: Arc<MeshBounds>,
    pub data: Arc<VertexData>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierVars {
    pub values: Vec<f64>,
    pub l: Vec<Vec<f64>>,
    pub uhat: f64,
    pub b2: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl StorageProblem {
    pub fn new(
        sys: Arc<SystemModel>,
        mesh: Arc<Triangulation>,
        region: Region,
        bounds: Arc<MeshBounds>,
        data: Arc<VertexData>,
    ) -> Self {
        StorageProblem {
            sys,
            mesh,
            region,
            bounds,
            data,
        }
    }

    /// Whether pair `(i, j)` is imposed (pairs at the origin are exempt).
    pub fn is_active(&self, i: usize, j: usize) -> bool {
        let v = self.mesh.simplex(i).vertices[j];
        self.mesh.vertex(v).iter().any(|&c| c != 0.0)
    }

    /// `H_ij` for one pair given the simplex gradient.
    pub fn pair_value(&self, i: usize, j: usize, grad: &[f64], l: &[f64], gamma: f64) -> f64 {
        let v = self.mesh.simplex(i).vertices[j];
        let b = self.bounds.get(i);
        let c = b.c[j];
        let sum_l: f64 = l.iter().sum();
        dot(&self.data.f[v], grad)
            + 0.5 * self.data.hh[v]
            + (sum_l * b.beta_f + 0.5 * b.beta_hh) * c
            + (self.data.gbar[v] + b.beta_gbar * c) * sum_l * sum_l / (2.0 * gamma)
    }

    /// All imposed `H_ij`, ordered by simplex then vertex position.
    pub fn assemble_h(&self, values: &[f64], l: &[Vec<f64>], gamma: f64) -> Result<Vec<PairValue>, CpaError> {
        let per: Vec<Vec<PairValue>> = self
            .region
            .ids()
            .iter()
            .copied()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&i| {
                let g = simplex_gradient(&self.mesh, i, values)?;
                Ok((0..=self.mesh.dim())
                    .filter(|&j| self.is_active(i, j))
                    .map(|j| PairValue {
                        simplex: i,
                        vertex: j,
                        value: self.pair_value(i, j, g.as_slice(), &l[i], gamma),
                    })
                    .collect())
            })
            .collect::<Result<_, CpaError>>()?;
        Ok(per.into_iter().flatten().collect())
    }

    /// Tightest feasible unknowns for fixed values and gain: `l = |grad V|`, `b1 = -max H`.
    pub fn tighten(&self, values: Vec<f64>, gamma: f64) -> Result<StorageVars, CpaError> {
        let l = tight_l(&self.mesh, &values)?;
        let h = self.assemble_h(&values, &l, gamma)?;
        let b1 = -h.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
        Ok(StorageVars {
            values,
            l,
            gamma,
            b1: if b1.is_finite() { b1 } else { 0.0 },
        })
    }

    pub fn check(&self, vars: &StorageVars, tol: f64) -> Result<StorageReport, CpaError> {
        let mut report = StorageReport {
            gamma_positive: vars.gamma > 0.0,
            b1_positive: vars.b1 > 0.0,
            negative_values: vars
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| !(**v >= 0.0))
                .map(|(i, _)| i)
                .collect(),
            gradient_violations: gradient_violations(&self.mesh, &self.region, &vars.values, &vars.l, tol)?,
            pair_violations: Vec::new(),
            max_h: f64::NEG_INFINITY,
        };
        if report.gamma_positive {
            for p in self.assemble_h(&vars.values, &vars.l, vars.gamma)? {
                report.max_h = report.max_h.max(p.value);
                if !(p.value <= -vars.b1 + tol) {
                    report.pair_violations.push(p);
                }
            }
        }
        Ok(report)
    }
}

impl BarrierProblem {
    /// Simplexes where the decrease condition is imposed.
    pub fn shell(&self) -> Vec<usize> {
        self.region
            .ids()
            .iter()
            .copied()
            .filter(|i| !self.inner.contains(*i))
            .collect()
    }

    pub fn pair_value(&self, i: usize, j: usize, grad: &[f64], l: &[f64], uhat: f64) -> f64 {
        let v = self.mesh.simplex(i).vertices[j];
        let b = self.bounds.get(i);
        let sum_l: f64 = l.iter().sum();
        dot(&self.data.f[v], grad) + sum_l * (b.beta_f * b.c[j] + b.ghat * uhat)
    }

    /// All `D+_ij W` on the shell, ordered by simplex then vertex position.
    pub fn assemble_dplus(&self, values: &[f64], l: &[Vec<f64>], uhat: f64) -> Result<Vec<PairValue>, CpaError> {
        let per: Vec<Vec<PairValue>> = self
            .shell()
            .par_iter()
            .map(|&i| {
                let g = simplex_gradient(&self.mesh, i, values)?;
                Ok((0..=self.mesh.dim())
                    .map(|j| PairValue {
                        simplex: i,
                        vertex: j,
                        value: self.pair_value(i, j, g.as_slice(), &l[i], uhat),
                    })
                    .collect())
            })
            .collect::<Result<_, CpaError>>()?;
        Ok(per.into_iter().flatten().collect())
    }

    pub fn tighten(&self, values: Vec<f64>, uhat: f64) -> Result<BarrierVars, CpaError> {
        let l = tight_l(&self.mesh, &values)?;
        let d = self.assemble_dplus(&values, &l, uhat)?;
        let b2 = -d.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
        Ok(BarrierVars {
            values,
            l,
            uhat,
            b2: if b2.is_finite() { b2 } else { 0.0 },
        })
    }

    /// Invariant level of `W` on the domain, with the inner set strictly below it.
    pub fn level(&self, values: &[f64]) -> Result<f64, CpaError> {
        self.level_in(&self.region, values)
    }

    /// Invariant level when the domain is restricted to `region`.
    pub fn level_in(&self, region: &Region, values: &[f64]) -> Result<f64, CpaError> {
        let boundary = region.boundary_vertices(&self.mesh);
        crate::cpa::level_from_values(values, &boundary, &self.inner.vertices(&self.mesh))
    }

    pub fn check(&self, vars: &BarrierVars, tol: f64) -> Result<BarrierReport, CpaError> {
        let mut report = BarrierReport {
            uhat_positive: vars.uhat > 0.0,
            b2_positive: vars.b2 > 0.0,
            nonpositive_values: vars
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| !(**v > 0.0))
                .map(|(i, _)| i)
                .collect(),
            gradient_violations: gradient_violations(&self.mesh, &self.region, &vars.values, &vars.l, tol)?,
            pair_violations: Vec::new(),
            max_dplus: f64::NEG_INFINITY,
            level: None,
            level_error: None,
        };
        for p in self.assemble_dplus(&vars.values, &vars.l, vars.uhat)? {
            report.max_dplus = report.max_dplus.max(p.value);
            if !(p.value <= -vars.b2 + tol) {
                report.pair_violations.push(p);
            }
        }
        match self.level(&vars.values) {
            Ok(c) => report.level = Some(c),
            Err(e) => report.level_error = Some(e.to_string()),
        }
        Ok(report)
    }
}

/// `|grad_i|` elementwise for every simplex of the mesh.
pub fn tight_l(mesh: &Triangulation, values: &[f64]) -> Result<Vec<Vec<f64>>, CpaError> {
    (0..mesh.num_simplices())
        .map(|i| Ok(simplex_gradient(mesh, i, values)?.iter().map(|g| g.abs()).collect()))
        .collect()
}

fn gradient_violations(
    mesh: &Triangulation,
    region: &Region,
    values: &[f64],
    l: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<(usize, usize)>, CpaError> {
    let mut out = Vec::new();
    for &i in region.ids() {
        let g = simplex_gradient(mesh, i, values)?;
        for (k, gk) in g.iter().enumerate() {
            let bound = l.get(i).and_then(|li| li.get(k)).copied().unwrap_or(f64::NAN);
            if !(gk.abs() <= bound + tol) {
                out.push((i, k));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct StorageReport {
    pub gamma_positive: bool,
    pub b1_positive: bool,
    pub negative_values: Vec<usize>,
    /// `(simplex, component)` pairs with `|grad V| > l`.
    pub gradient_violations: Vec<(usize, usize)>,
    pub pair_violations: Vec<PairValue>,
    pub max_h: f64,
}

impl StorageReport {
    pub fn passed(&self) -> bool {
        self.gamma_positive
            && self.b1_positive
            && self.negative_values.is_empty()
            && self.gradient_violations.is_empty()
            && self.pair_violations.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    pub uhat_positive: bool,
    pub b2_positive: bool,
    pub nonpositive_values: Vec<usize>,
    pub gradient_violations: Vec<(usize, usize)>,
    pub pair_violations: Vec<PairValue>,
    pub max_dplus: f64,
    pub level: Option<f64>,
    pub level_error: Option<String>,
}

impl BarrierReport {
    pub fn passed(&self) -> bool {
        self.uhat_positive
            && self.b2_positive
            && self.nonpositive_values.is_empty()
            && self.gradient_violations.is_empty()
            && self.pair_violations.is_empty()
            && self.level.is_some()
    }
}

/// Largest connected union of simplexes grown from `seed` inside `candidates`
/// on which every listed pair value is strictly negative. Expansion visits the
/// lowest id first, so the result is deterministic. Returns an empty region when
/// some seed simplex is itself infeasible.
pub fn max_feasible_subtriangulation(
    values: &[PairValue],
    mesh: &Triangulation,
    candidates: &Region,
    seed: &Region,
) -> Result<Region, SubTriangulationError> {
    let mut feasible = vec![true; mesh.num_simplices()];
    for p in values {
        if !(p.value < 0.0) {
            feasible[p.simplex] = false;
        }
    }
    let bad_seed: Vec<usize> = seed.ids().iter().copied().filter(|&i| !feasible[i]).collect();
    if !bad_seed.is_empty() {
        return Err(SubTriangulationError::InfeasibleSeed(bad_seed));
    }
    let mut taken: BTreeSet<usize> = seed.ids().clone();
    let mut heap: BinaryHeap<Reverse<usize>> = BinaryHeap::new();
    for &i in seed.ids() {
        for j in mesh.neighbors(i) {
            heap.push(Reverse(j));
        }
    }
    while let Some(Reverse(i)) = heap.pop() {
        if taken.contains(&i) || !candidates.contains(i) || !feasible[i] {
            continue;
        }
        taken.insert(i);
        for j in mesh.neighbors(i) {
            if !taken.contains(&j) {
                heap.push(Reverse(j));
            }
        }
    }
    Ok(Region::new(taken))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubTriangulationError {
    #[error("seed simplexes {0:?} violate the inequalities")]
    InfeasibleSeed(Vec<usize>),
}

/// Simplexes having the origin as a vertex.
pub fn origin_star(mesh: &Triangulation) -> Region {
    match mesh.origin_vertex() {
        Some(o) => Region::new((0..mesh.num_simplices()).filter(|&i| mesh.simplex(i).vertices.contains(&o))),
        None => Region::default(),
    }
}

/// Convenience wrapper building the CPA function of a set of vertex values.
pub fn cpa(mesh: &Arc<Triangulation>, values: &[f64]) -> Result<CpaFunction, CpaError> {
    CpaFunction::new(mesh.clone(), values.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{NormKind, SimplexBounds};
    use crate::mesh::kuhn_triangulate;
    use std::collections::BTreeMap;

    fn unit_mesh() -> Arc<Triangulation> {
        Arc::new(
            Triangulation::from_parts(
                vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0, 1, 2]],
                BTreeMap::new(),
                None,
            )
            .unwrap(),
        )
    }

    fn storage_on(mesh: Arc<Triangulation>, bounds: MeshBounds) -> StorageProblem {
        let sys = Arc::new(SystemModel::builtin("pendulum").unwrap());
        let data = Arc::new(VertexData::compute(&sys, &mesh).unwrap());
        let region = Region::all(&mesh);
        StorageProblem::new(sys, mesh, region, Arc::new(bounds), data)
    }

    fn hand_bounds(c: Vec<f64>, ghat: f64) -> MeshBounds {
        MeshBounds {
            norm_kind: NormKind::L2,
            simplexes: vec![SimplexBounds {
                c,
                beta_f: 1.0,
                beta_hh: 2.0,
                beta_gbar: 2.0,
                ghat,
            }],
        }
    }

    #[test]
    fn storage_pair_by_hand() {
        let p = storage_on(unit_mesh(), hand_bounds(vec![0.0, 2.0, 2.0], 1.0));
        let h = p.pair_value(0, 1, &[1.0, 2.0], &[1.0, 1.0], 1.0);
        let expected = -2.0 * 1f64.sin() + 6.0 + 8.0;
        assert!((h - expected).abs() < 1e-12);
        assert!((h - 12.31706).abs() < 1e-5);
        assert!(!p.is_active(0, 0));
        // the origin pair evaluates to zero anyway
        assert_eq!(p.pair_value(0, 0, &[1.0, 2.0], &[1.0, 1.0], 1.0), 0.0);
        let all = p.assemble_h(&[0.0, 1.0, 2.0], &[vec![1.0, 1.0]], 1.0).unwrap();
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|v| v.vertex != 0));
    }

    #[test]
    fn zero_system_pairs_vanish() {
        let sys = Arc::new(SystemModel::builtin("zero").unwrap());
        let mesh = Arc::new(kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[2, 2]).unwrap());
        let bounds = Arc::new(MeshBounds::compute(&sys, &mesh, NormKind::L2).unwrap());
        let data = Arc::new(VertexData::compute(&sys, &mesh).unwrap());
        let p = StorageProblem::new(sys, mesh.clone(), Region::all(&mesh), bounds, data);
        let vars = p.tighten(vec![0.0; mesh.num_vertices()], 1.0).unwrap();
        let h = p.assemble_h(&vars.values, &vars.l, 1.0).unwrap();
        assert!(h.iter().all(|v| v.value == 0.0));
        assert_eq!(vars.b1, 0.0);
    }

    #[test]
    fn barrier_pair_by_hand() {
        let mesh = Arc::new(
            Triangulation::from_parts(
                vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5]],
                vec![vec![0, 1, 2]],
                BTreeMap::new(),
                None,
            )
            .unwrap(),
        );
        let sys = Arc::new(SystemModel::builtin("pendulum").unwrap());
        let data = Arc::new(VertexData::compute(&sys, &mesh).unwrap());
        let p = BarrierProblem {
            sys,
            mesh: mesh.clone(),
            region: Region::all(&mesh),
            inner: Region::default(),
            bounds: Arc::new(hand_bounds(vec![0.0, 2.0, 2.0], 0.5)),
            data,
        };
        let d = p.pair_value(0, 1, &[1.0, 1.0], &[1.0, 1.0], 0.1);
        assert!((d - (-(0.5f64.sin()) + 2.0 * 2.05)).abs() < 1e-12);
        assert!((d - 3.62057).abs() < 1e-5);
        let doubled = p.pair_value(0, 1, &[1.0, 1.0], &[1.0, 1.0], 0.2);
        assert!((doubled - d - 2.0 * 0.5 * 0.1).abs() < 1e-12);
        assert_eq!(p.pair_value(0, 1, &[0.0, 0.0], &[0.0, 0.0], 0.1), 0.0);
        // origin pairs are not exempt on the barrier side
        assert_eq!(p.assemble_dplus(&[1.0, 1.5, 1.5], &[vec![1.0, 1.0]], 0.1).unwrap().len(), 3);
    }

    #[test]
    fn storage_check_flags_violations() {
        let sys = Arc::new(SystemModel::builtin("pendulum").unwrap());
        let mesh = Arc::new(kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[4, 4]).unwrap());
        let bounds = Arc::new(MeshBounds::compute(&sys, &mesh, NormKind::L2).unwrap());
        let data = Arc::new(VertexData::compute(&sys, &mesh).unwrap());
        let p = StorageProblem::new(sys, mesh.clone(), Region::all(&mesh), bounds, data);
        let values: Vec<f64> = mesh.vertices().iter().map(|x| x[0] * x[0] + x[1] * x[1]).collect();
        let vars = p.tighten(values, 1.0).unwrap();
        let report = p.check(&vars, CHECK_TOL).unwrap();
        assert!(report.gradient_violations.is_empty() && report.pair_violations.is_empty());
        assert_eq!(report.passed(), vars.b1 > 0.0);

        let mut bad = vars.clone();
        bad.values[7] += 10.0;
        let report = p.check(&bad, CHECK_TOL).unwrap();
        assert!(!report.gradient_violations.is_empty());
        assert!(!report.passed());

        let mut bad = vars.clone();
        bad.gamma = 0.0;
        assert!(!p.check(&bad, CHECK_TOL).unwrap().gamma_positive);
    }

    #[test]
    fn flood_fill_examples() {
        let mesh = kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[4, 4]).unwrap();
        let all = Region::all(&mesh);
        let seed = origin_star(&mesh);
        let pairs = |bad: &[usize]| -> Vec<PairValue> {
            (0..mesh.num_simplices())
                .map(|i| PairValue {
                    simplex: i,
                    vertex: 1,
                    value: if bad.contains(&i) { 1.0 } else { -1.0 },
                })
                .collect()
        };
        let got = max_feasible_subtriangulation(&pairs(&[]), &mesh, &all, &seed).unwrap();
        assert_eq!(got, all);

        let corner = mesh.locate(&[0.95, 0.9]).unwrap();
        let got = max_feasible_subtriangulation(&pairs(&[corner]), &mesh, &all, &seed).unwrap();
        assert_eq!(got.len(), mesh.num_simplices() - 1);
        assert!(!got.contains(corner));

        // a ring of bad simplexes around the seed blocks everything beyond it
        let ring: Vec<usize> = (0..mesh.num_simplices())
            .filter(|&i| !seed.contains(i) && mesh.neighbors(i).iter().any(|j| seed.contains(*j)))
            .collect();
        let got = max_feasible_subtriangulation(&pairs(&ring), &mesh, &all, &seed).unwrap();
        assert_eq!(got, seed);

        let inside = *seed.ids().iter().next().unwrap();
        assert!(matches!(
            max_feasible_subtriangulation(&pairs(&[inside]), &mesh, &all, &seed),
            Err(SubTriangulationError::InfeasibleSeed(_))
        ));
    }
}
