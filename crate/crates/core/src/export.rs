//! CSV views of a certificate for plotting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::certificate::Certificate;
use crate::cpa::{CpaError, CpaFunction};
use crate::mesh::Triangulation;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{what} export needs a two-dimensional state space, got {n}")]
    NotPlanar { what: &'static str, n: usize },
    #[error(transparent)]
    Cpa(#[from] CpaError),
    #[error("the level set of W has no closed component around the origin")]
    NoContour,
}

fn planar(mesh: &Triangulation, what: &'static str) -> Result<(), ExportError> {
    if mesh.dim() != 2 {
        return Err(ExportError::NotPlanar { what, n: mesh.dim() });
    }
    Ok(())
}

fn edges(mesh: &Triangulation) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for s in mesh.simplices() {
        for (a, &p) in s.vertices.iter().enumerate() {
            for &q in &s.vertices[a + 1..] {
                out.insert((p.min(q), p.max(q)));
            }
        }
    }
    out
}

/// `mesh,x0,y0,x1,y1`: every edge of the storage and barrier meshes.
pub fn mesh_edges_csv(cert: &Certificate) -> Result<String, ExportError> {
    let mut out = String::from("mesh,x0,y0,x1,y1\n");
    for (name, mesh) in [("storage", &cert.mesh), ("barrier", &cert.mesh_hat)] {
        planar(mesh, "mesh")?;
        for (p, q) in edges(mesh) {
            let (a, b) = (mesh.vertex(p), mesh.vertex(q));
            writeln!(out, "{name},{},{},{},{}", a[0], a[1], b[0], b[1]).unwrap();
        }
    }
    Ok(out)
}

/// Closed polylines of `{W = level}`, one per connected component. Crossing
/// points are shared between neighbouring triangles, so each component is a
/// cycle in the crossing graph.
pub fn level_contours(mesh: &Triangulation, values: &[f64], level: f64) -> Vec<Vec<[f64; 2]>> {
    let below = |v: usize| values[v] <= level;
    let mut point: BTreeMap<(usize, usize), [f64; 2]> = BTreeMap::new();
    let mut adj: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for s in mesh.simplices() {
        let mut cut = Vec::new();
        for a in 0..3 {
            let (p, q) = (s.vertices[a], s.vertices[(a + 1) % 3]);
            if below(p) != below(q) {
                let key = (p.min(q), p.max(q));
                let t = (level - values[p]) / (values[q] - values[p]);
                let (xp, xq) = (mesh.vertex(p), mesh.vertex(q));
                point.insert(key, [xp[0] + t * (xq[0] - xp[0]), xp[1] + t * (xq[1] - xp[1])]);
                cut.push(key);
            }
        }
        if let [a, b] = cut[..] {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
    }
    let mut seen = BTreeSet::new();
    let mut rings = Vec::new();
    for &start in adj.keys() {
        if seen.contains(&start) {
            continue;
        }
        let mut ring = Vec::new();
        let (mut prev, mut cur) = (None, start);
        loop {
            seen.insert(cur);
            ring.push(point[&cur]);
            let next = adj[&cur].iter().copied().find(|&k| Some(k) != prev && !seen.contains(&k));
            match next {
                Some(k) => {
                    prev = Some(cur);
                    cur = k;
                }
                None => break,
            }
        }
        if adj[&cur].contains(&start) && ring.len() > 2 {
            ring.push(ring[0]);
        }
        rings.push(ring);
    }
    rings
}

/// Winding number of a closed polyline around `p`.
pub fn winding_number(ring: &[[f64; 2]], p: [f64; 2]) -> i32 {
    let mut w = 0;
    for e in ring.windows(2) {
        let (a, b) = (e[0], e[1]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && cross > 0.0 {
                w += 1;
            }
        } else if b[1] <= p[1] && cross < 0.0 {
            w -= 1;
        }
    }
    w
}

/// `x,y`: the closed boundary of the invariant set around the origin, with
/// the first point repeated at the end.
pub fn levelset_csv(cert: &Certificate) -> Result<String, ExportError> {
    planar(&cert.mesh_hat, "levelset")?;
    let ring = level_contours(&cert.mesh_hat, &cert.w, cert.level_c)
        .into_iter()
        .find(|r| r.len() > 3 && r.first() == r.last() && winding_number(r, [0.0, 0.0]) != 0)
        .ok_or(ExportError::NoContour)?;
    let mut out = String::from("x,y\n");
    for p in ring {
        writeln!(out, "{},{}", p[0], p[1]).unwrap();
    }
    Ok(out)
}

/// One row per iteration record.
pub fn history_csv(cert: &Certificate) -> String {
    let mut out = String::from("phase,iter,objective_tag,J,b1,sqrt_gamma,b2,uhat,solver_status\n");
    for r in &cert.history {
        let storage = r.phase.starts_with("storage");
        let (b1, sg, b2, uh) = if storage {
            (r.margin.to_string(), r.scalar.sqrt().to_string(), String::new(), String::new())
        } else {
            (String::new(), String::new(), r.margin.to_string(), r.scalar.to_string())
        };
        writeln!(
            out,
            "{},{},{},{},{b1},{sg},{b2},{uh},{}",
            r.phase, r.iter, r.objective_tag, r.j, r.solver_status
        )
        .unwrap();
    }
    out
}

/// `x,y,V,W` on a `k x k` grid over the barrier mesh's bounding box; a
/// field is empty where its mesh does not cover the point.
pub fn fields_csv(cert: &Certificate, k: usize) -> Result<String, ExportError> {
    planar(&cert.mesh_hat, "fields")?;
    let v = CpaFunction::new(std::sync::Arc::new(cert.mesh.clone()), cert.v.clone())?;
    let w = CpaFunction::new(std::sync::Arc::new(cert.mesh_hat.clone()), cert.w.clone())?;
    let (lo, hi) = cert.mesh_hat.bounds();
    let coord = |d: usize, i: usize| lo[d] + (hi[d] - lo[d]) * i as f64 / (k.max(2) - 1) as f64;
    let mut out = String::from("x,y,V,W\n");
    for j in 0..k {
        for i in 0..k {
            let x = [coord(0, i), coord(1, j)];
            let cell = |f: &CpaFunction| f.evaluate(&x).map(|z| z.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", x[0], x[1], cell(&v), cell(&w)).unwrap();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::kuhn_triangulate;

    #[test]
    fn circle_contour_is_closed_and_winds_once() {
        let mesh = kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[10, 10]).unwrap();
        let values: Vec<f64> = mesh.vertices().iter().map(|x| x[0] * x[0] + x[1] * x[1]).collect();
        let rings = level_contours(&mesh, &values, 0.5);
        assert_eq!(rings.len(), 1);
        let ring = &rings[0];
        assert_eq!(ring.first(), ring.last());
        assert_eq!(winding_number(ring, [0.0, 0.0]).abs(), 1);
        assert_eq!(winding_number(ring, [0.95, 0.95]), 0);
        for p in ring {
            let r2 = p[0] * p[0] + p[1] * p[1];
            assert!((r2 - 0.5).abs() < 0.05, "{r2}");
        }
    }

    #[test]
    fn two_wells_give_two_rings() {
        let mesh = kuhn_triangulate(&[(-2.0, 2.0), (-1.0, 1.0)], &[20, 10]).unwrap();
        let values: Vec<f64> = mesh
            .vertices()
            .iter()
            .map(|x| ((x[0] - 1.0).powi(2) + x[1] * x[1]).min((x[0] + 1.0).powi(2) + x[1] * x[1]))
            .collect();
        let rings = level_contours(&mesh, &values, 0.25);
        assert_eq!(rings.len(), 2);
        assert!(rings.iter().all(|r| winding_number(r, [0.0, 0.0]) == 0));
        assert!(rings.iter().any(|r| winding_number(r, [1.0, 0.0]) != 0));
    }

    #[test]
    fn winding_of_square() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
        assert_eq!(winding_number(&sq, [0.5, 0.5]), 1);
        assert_eq!(winding_number(&sq, [1.5, 0.5]), 0);
    }
}
