//! Per-simplex constants bounding the interpolation error of the system's
//! nonlinearities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::{IntervalError, SystemModel};
use crate::mesh::Triangulation;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
    LInf,
}

impl NormKind {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
            NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormKind::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("bounding second derivatives on simplex {simplex} failed: {source}")]
pub struct BoundsError {
    pub simplex: usize,
    pub source: IntervalError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexBounds {
    /// One entry per vertex, in the simplex's vertex order.
    pub c: Vec<f64>,
    pub beta_f: f64,
    pub beta_hh: f64,
    pub beta_gbar: f64,
    pub ghat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshBounds {
    pub norm_kind: NormKind,
    pub simplexes: Vec<SimplexBounds>,
}

impl MeshBounds {
    pub fn compute(sys: &SystemModel, mesh: &Triangulation, norm: NormKind) -> Result<Self, BoundsError> {
        let simplexes = (0..mesh.num_simplices())
            .into_par_iter()
            .map(|i| simplex_bounds(sys, mesh, i, norm))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MeshBounds {
            norm_kind: norm,
            simplexes,
        })
    }

    pub fn get(&self, i: usize) -> &SimplexBounds {
        &self.simplexes[i]
    }
}

pub fn simplex_bounds(
    sys: &SystemModel,
    mesh: &Triangulation,
    i: usize,
    norm: NormKind,
) -> Result<SimplexBounds, BoundsError> {
    let wrap = |source| BoundsError { simplex: i, source };
    Ok(SimplexBounds {
        c: cij(mesh, i, norm),
        beta_f: hessian_bound_f(sys, mesh, i).map_err(wrap)?,
        beta_hh: hessian_bound_hh(sys, mesh, i).map_err(wrap)?,
        beta_gbar: hessian_bound_gbar(sys, mesh, i).map_err(wrap)?,
        ghat: g_norm_bound(sys, mesh, i).map_err(wrap)?,
    })
}

/// `c_j = (n/2) |x_j - x_0| (max_k |x_k - x_0| + |x_j - x_0|)`.
pub fn cij(mesh: &Triangulation, i: usize, norm: NormKind) -> Vec<f64> {
    let s = mesh.simplex(i);
    let n = mesh.dim() as f64;
    let x0 = mesh.vertex(s.vertices[0]);
    let dist: Vec<f64> = s
        .vertices
        .iter()
        .map(|&v| {
            let d: Vec<f64> = mesh.vertex(v).iter().zip(x0).map(|(a, b)| a - b).collect();
            norm.norm(&d)
        })
        .collect();
    let max = dist.iter().copied().fold(0.0, f64::max);
    dist.iter().map(|&d| 0.5 * n * d * (max + d)).collect()
}

/// Largest magnitude of any second partial of any component of `f` over the simplex's box.
pub fn hessian_bound_f(sys: &SystemModel, mesh: &Triangulation, i: usize) -> Result<f64, IntervalError> {
    let boxx = mesh.simplex_box(i);
    let mut beta = 0.0f64;
    for row in sys.hessian_f_intervals(&boxx)? {
        for iv in row {
            beta = beta.max(iv.mag());
        }
    }
    Ok(beta)
}

/// Same bound for `h^T h`.
pub fn hessian_bound_hh(sys: &SystemModel, mesh: &Triangulation, i: usize) -> Result<f64, IntervalError> {
    let boxx = mesh.simplex_box(i);
    let mut beta = 0.0f64;
    for e in &sys.hess_hh {
        beta = beta.max(e.interval_eval(&boxx)?.mag());
    }
    Ok(beta)
}

/// Bound for the max-row-sum norm of `G G^T`: every smooth piece
/// `sum_r +-(G G^T)_{pr}` has second partials bounded by `sum_r sup |d2 (G G^T)_{pr}|`.
pub fn hessian_bound_gbar(sys: &SystemModel, mesh: &Triangulation, i: usize) -> Result<f64, IntervalError> {
    let boxx = mesh.simplex_box(i);
    let pairs = crate::expr::hessian_pairs(sys.n).len();
    let mut beta = 0.0f64;
    for row in &sys.hess_ggt {
        for k in 0..pairs {
            let mut sum = 0.0;
            for entry in row {
                sum += entry[k].interval_eval(&boxx)?.mag();
            }
            beta = beta.max(sum);
        }
    }
    Ok(beta)
}

/// Upper bound on the max-row-sum norm of `G(x)` over the simplex's box.
pub fn g_norm_bound(sys: &SystemModel, mesh: &Triangulation, i: usize) -> Result<f64, IntervalError> {
    let boxx = mesh.simplex_box(i);
    Ok(sys
        .g_intervals(&boxx)?
        .iter()
        .map(|row| row.iter().map(|iv| iv.mag()).sum::<f64>())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SystemFile;
    use crate::mesh::kuhn_triangulate;
    use std::collections::BTreeMap;

    fn system(f: &[&str], g: &[&str], h: &[&str], m: usize) -> SystemModel {
        let file = SystemFile {
            n: f.len(),
            m,
            q: h.len(),
            f: f.iter().map(|s| s.to_string()).collect(),
            g: g.iter().map(|s| s.to_string()).collect(),
            h: h.iter().map(|s| s.to_string()).collect(),
            a: None,
            b: None,
            c: None,
        };
        SystemModel::from_file(&file).unwrap()
    }

    fn unit_simplex() -> Triangulation {
        Triangulation::from_parts(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0, 1, 2]],
            BTreeMap::new(),
            None,
        )
        .unwrap()
    }

    fn scaled_simplex(s: f64) -> Triangulation {
        Triangulation::from_parts(
            vec![vec![0.0, 0.0], vec![s, 0.0], vec![0.3 * s, 0.7 * s]],
            vec![vec![0, 1, 2]],
            BTreeMap::new(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn cij_examples() {
        assert_eq!(cij(&unit_simplex(), 0, NormKind::L2), vec![0.0, 2.0, 2.0]);
        let base = cij(&scaled_simplex(1.0), 0, NormKind::L2);
        let big = cij(&scaled_simplex(3.0), 0, NormKind::L2);
        assert_eq!(base[0], 0.0);
        for (a, b) in base.iter().zip(&big) {
            assert!((b - 9.0 * a).abs() < 1e-12);
        }
    }

    #[test]
    fn pendulum_constants() {
        let sys = SystemModel::builtin("pendulum").unwrap();
        let mesh = Triangulation::from_parts(
            vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5]],
            vec![vec![0, 1, 2]],
            BTreeMap::new(),
            None,
        )
        .unwrap();
        let beta = hessian_bound_f(&sys, &mesh, 0).unwrap();
        assert!(beta >= 0.5f64.sin() && beta <= 0.4795, "{beta}");
        assert_eq!(hessian_bound_hh(&sys, &mesh, 0).unwrap(), 2.0);
        assert_eq!(hessian_bound_gbar(&sys, &mesh, 0).unwrap(), 2.0);

        let domain = kuhn_triangulate(&[(-1.5, 1.5), (-1.5, 1.5)], &[2, 2]).unwrap();
        let all = MeshBounds::compute(&sys, &domain, NormKind::L2).unwrap();
        for b in &all.simplexes {
            assert!(b.beta_f <= 1.0);
            assert!(b.ghat >= 1.5 && b.ghat < 1.5 + 1e-12);
        }
    }

    #[test]
    fn simple_fields() {
        let mesh = unit_simplex();
        let linear = system(&["x2", "-x1"], &["0", "0"], &["0"], 1);
        assert_eq!(hessian_bound_f(&linear, &mesh, 0).unwrap(), 0.0);
        assert_eq!(hessian_bound_hh(&linear, &mesh, 0).unwrap(), 0.0);
        assert_eq!(hessian_bound_gbar(&linear, &mesh, 0).unwrap(), 0.0);

        let square = system(&["x1^2", "0"], &["0", "0"], &["x1 + x2"], 1);
        assert_eq!(hessian_bound_f(&square, &mesh, 0).unwrap(), 2.0);
        assert_eq!(hessian_bound_hh(&square, &mesh, 0).unwrap(), 2.0);
        assert_eq!(g_norm_bound(&square, &mesh, 0).unwrap(), 0.0);

        // row sums of |G| peak at (0.3, 0.7) where x1 = 1
        let rows = system(&["0", "0"], &["0.1*x1", "-0.2*x1", "0.3*x1", "0.4*x1"], &["0"], 2);
        assert!((g_norm_bound(&rows, &mesh, 0).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn refinement_shrinks_bounds() {
        let sys = SystemModel::builtin("pendulum").unwrap();
        let coarse = kuhn_triangulate(&[(-1.5, 1.5), (-1.5, 1.5)], &[4, 4]).unwrap();
        let fine = coarse.refine_all().unwrap();
        let cb = MeshBounds::compute(&sys, &coarse, NormKind::L2).unwrap();
        let fb = MeshBounds::compute(&sys, &fine, NormKind::L2).unwrap();
        for i in 0..fine.num_simplices() {
            let p = coarse.locate(&fine.centroid(i)).unwrap();
            let parent = cb.get(p);
            let child = fb.get(i);
            let max_c = parent.c.iter().copied().fold(0.0, f64::max);
            assert!(child.c.iter().all(|&c| c <= max_c));
            assert!(child.beta_f <= parent.beta_f);
            assert!(child.ghat <= parent.ghat);
        }
    }
}
