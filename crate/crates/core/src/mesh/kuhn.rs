use std::collections::BTreeMap;

use super::{flat_index, for_each_multi_index, MeshError, Triangulation};

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 0..n {
        for rest in permutations(n - 1) {
            let mut p = vec![first];
            p.extend(rest.into_iter().map(|r| if r >= first { r + 1 } else { r }));
            out.push(p);
        }
    }
    out
}

/// Uniform grid lines with the origin snapped to exactly 0.
pub fn uniform_lines(extents: &[(f64, f64)], grid: &[usize]) -> Result<Vec<Vec<f64>>, MeshError> {
    let n = extents.len();
    if n == 0 || grid.len() != n {
        return Err(MeshError::DimensionMismatch(n, grid.len()));
    }
    let mut lines = Vec::with_capacity(n);
    for (axis, (&(lo, hi), &k)) in extents.iter().zip(grid).enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || k == 0 {
            return Err(MeshError::DegenerateBox { axis, lo, hi });
        }
        let j = -lo * k as f64 / (hi - lo);
        let jr = j.round();
        if (j - jr).abs() > 1e-9 || jr < 0.0 || jr > k as f64 {
            return Err(MeshError::OriginNotOnGrid { axis });
        }
        lines.push(
            (0..=k)
                .map(|i| if i as f64 == jr { 0.0 } else { lo + (hi - lo) * i as f64 / k as f64 })
                .collect(),
        );
    }
    Ok(lines)
}

/// Lines with midpoints inserted between neighbors inside `[lo, hi]` on each axis.
pub fn split_lines(lines: &[Vec<f64>], within: &[(f64, f64)]) -> Vec<Vec<f64>> {
    lines
        .iter()
        .zip(within)
        .map(|(axis, &(lo, hi))| {
            let tol = 1e-12 * (hi - lo).abs().max(1.0);
            let mut out = vec![axis[0]];
            for w in axis.windows(2) {
                if w[0] >= lo - tol && w[1] <= hi + tol {
                    out.push(0.5 * (w[0] + w[1]));
                }
                out.push(w[1]);
            }
            out
        })
        .collect()
}

/// Kuhn subdivision of the uniform grid `extents` x `grid`: `n!` simplexes per cell.
pub fn kuhn_triangulate(extents: &[(f64, f64)], grid: &[usize]) -> Result<Triangulation, MeshError> {
    tensor_triangulate(&uniform_lines(extents, grid)?, 0)
}

/// [`tensor_triangulate`] on a uniform grid.
pub fn fan_triangulate(extents: &[(f64, f64)], grid: &[usize], fan: usize) -> Result<Triangulation, MeshError> {
    tensor_triangulate(&uniform_lines(extents, grid)?, fan)
}

/// Kuhn subdivision of the rectilinear grid with the given lines per axis.
///
/// Each cell is split along the paths from its lower corner to its upper
/// corner that step along one axis at a time. With `fan > 0`, the cube
/// spanning `fan` cells on each side of the origin is instead triangulated by
/// joining each of its boundary facets to the origin, so every simplex there
/// has the origin as a vertex.
pub fn tensor_triangulate(lines: &[Vec<f64>], fan: usize) -> Result<Triangulation, MeshError> {
    let n = lines.len();
    if n == 0 {
        return Err(MeshError::DimensionMismatch(0, 0));
    }
    let mut origin_index = Vec::with_capacity(n);
    for (axis, l) in lines.iter().enumerate() {
        let (lo, hi) = (l[0], *l.last().unwrap_or(&l[0]));
        if l.len() < 2 || l.iter().any(|c| !c.is_finite()) || l.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MeshError::DegenerateBox { axis, lo, hi });
        }
        let o = l.iter().position(|&c| c == 0.0).ok_or(MeshError::OriginNotOnGrid { axis })?;
        if fan > 0 && (o < fan || o + fan >= l.len()) {
            return Err(MeshError::Invalid(format!(
                "fan of {fan} cells does not fit inside the box on axis {axis}"
            )));
        }
        origin_index.push(o);
    }
    let grid: Vec<usize> = lines.iter().map(|l| l.len() - 1).collect();
    let vdims: Vec<usize> = lines.iter().map(Vec::len).collect();
    let zeros = vec![0; n];
    let in_cube = |idx: &[usize]| (0..n).all(|d| idx[d] + fan > origin_index[d] && idx[d] < origin_index[d] + fan);
    let on_cube = |idx: &[usize]| (0..n).all(|d| idx[d] + fan >= origin_index[d] && idx[d] <= origin_index[d] + fan);

    // vertex ids are dense over the kept grid points, first axis fastest
    let mut vertex_id = vec![usize::MAX; vdims.iter().product()];
    let mut vertices = Vec::new();
    for_each_multi_index(&zeros, &grid, |idx| {
        let keep = fan == 0 || !in_cube(idx) || idx == origin_index.as_slice();
        if keep {
            vertex_id[flat_index(idx, &vdims)] = vertices.len();
            vertices.push((0..n).map(|d| lines[d][idx[d]]).collect::<Vec<f64>>());
        }
    });
    let origin = vertex_id[flat_index(&origin_index, &vdims)];

    let perms = permutations(n);
    let last_cell: Vec<usize> = grid.iter().map(|k| k - 1).collect();
    let mut simplexes = Vec::new();
    let mut cone = Vec::new();
    for_each_multi_index(&zeros, &last_cell, |cell| {
        let inside = fan > 0 && (0..n).all(|d| cell[d] + fan >= origin_index[d] && cell[d] < origin_index[d] + fan);
        for perm in &perms {
            let mut corner = cell.to_vec();
            let mut path = Vec::with_capacity(n + 1);
            path.push(corner.clone());
            for &axis in perm {
                corner[axis] += 1;
                path.push(corner.clone());
            }
            if !inside {
                let mut ids: Vec<usize> = path.iter().map(|p| vertex_id[flat_index(p, &vdims)]).collect();
                if let Some(pos) = ids.iter().position(|&v| v == origin) {
                    ids.swap(0, pos);
                }
                simplexes.push(ids);
                continue;
            }
            // facets of this simplex lying on one face of the cube
            for skip in 0..=n {
                let facet: Vec<&Vec<usize>> = (0..=n).filter(|&j| j != skip).map(|j| &path[j]).collect();
                let on_face = (0..n).any(|d| {
                    [origin_index[d] - fan, origin_index[d] + fan]
                        .iter()
                        .any(|&side| facet.iter().all(|p| p[d] == side))
                });
                if on_face && facet.iter().all(|p| on_cube(p)) {
                    let mut ids = vec![origin];
                    ids.extend(facet.iter().map(|p| vertex_id[flat_index(p, &vdims)]));
                    cone.push(ids);
                }
            }
        }
    });
    simplexes.extend(cone);
    let mut mesh = Triangulation::from_parts(vertices, simplexes, BTreeMap::new(), Some(lines.to_vec()))?;
    mesh.fan = (fan > 0).then_some(fan);
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_single_cell() {
        let t = kuhn_triangulate(&[(0.0, 1.0), (0.0, 1.0)], &[1, 1]).unwrap();
        assert_eq!(t.num_simplices(), 2);
        assert_eq!(t.num_vertices(), 4);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn centered_square() {
        let t = kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[2, 2]).unwrap();
        assert_eq!(t.num_simplices(), 8);
        assert_eq!(t.num_vertices(), 9);
        let origin = t.origin_vertex().unwrap();
        for s in t.simplices() {
            if s.vertices.contains(&origin) {
                assert_eq!(s.vertices[0], origin);
            }
        }
        assert!(t.validate().is_empty());
    }

    #[test]
    fn fan_replaces_the_center() {
        let t = fan_triangulate(&[(-1.5, 1.5), (-1.5, 1.5)], &[20, 20], 2).unwrap();
        // 4 x 4 center cells (32 simplexes) become 16 boundary edges joined to the origin
        assert_eq!(t.num_simplices(), 800 - 32 + 16);
        assert_eq!(t.num_vertices(), 441 - 8);
        assert!(t.validate().is_empty());
        assert!((t.total_volume() - 9.0).abs() < 1e-12);
        let origin = t.origin_vertex().unwrap();
        for s in t.simplices() {
            let c: Vec<f64> = (0..2)
                .map(|d| s.vertices.iter().map(|&v| t.vertex(v)[d]).sum::<f64>() / 3.0)
                .collect();
            if c.iter().all(|x| x.abs() < 0.3) {
                assert_eq!(s.vertices[0], origin);
            }
        }
        let fine = t.refine_all().unwrap();
        assert_eq!(fine.fan(), Some(4));
        assert!(fine.validate().is_empty());
        for v in t.vertices() {
            assert!(fine.vertices().iter().any(|w| w == v));
        }
    }

    #[test]
    fn fan_in_three_dimensions() {
        let t = fan_triangulate(&[(-1.0, 1.0); 3], &[4, 4, 4], 1).unwrap();
        // 8 center cells: 6 faces x 4 unit squares x 2 triangles
        assert_eq!(t.num_simplices(), 6 * 64 - 48 + 48);
        assert!(t.validate().is_empty());
        assert!((t.total_volume() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn graded_grid() {
        let lines = uniform_lines(&[(-1.5, 1.5), (-1.5, 1.5)], &[20, 20]).unwrap();
        let lines = split_lines(&lines, &[(-0.3, 0.3), (-0.3, 0.3)]);
        assert_eq!(lines[0].len(), 25);
        assert!(lines[0].contains(&-0.075) || lines[0].iter().any(|&c| (c + 0.075).abs() < 1e-12));
        let t = tensor_triangulate(&lines, 2).unwrap();
        assert!(t.validate().is_empty());
        assert!((t.total_volume() - 9.0).abs() < 1e-12);
        assert_eq!(t.num_simplices(), 2 * 24 * 24 - 32 + 16);
    }

    #[test]
    fn fan_must_fit() {
        assert!(fan_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[4, 4], 3).is_err());
    }

    #[test]
    fn one_dimensional() {
        let t = kuhn_triangulate(&[(-1.0, 1.0)], &[2]).unwrap();
        assert_eq!(t.num_simplices(), 2);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn three_dimensional_counts() {
        let t = kuhn_triangulate(&[(-1.0, 1.0); 3], &[2, 2, 2]).unwrap();
        assert_eq!(t.num_simplices(), 6 * 8);
        assert!((t.total_volume() - 8.0).abs() < 1e-12);
        assert!(t.validate().is_empty());
    }

    #[test]
    fn rejects_bad_grids() {
        assert_eq!(
            kuhn_triangulate(&[(-1.0, 2.0)], &[2]).unwrap_err(),
            MeshError::OriginNotOnGrid { axis: 0 }
        );
        assert!(matches!(
            kuhn_triangulate(&[(1.0, 1.0)], &[2]),
            Err(MeshError::DegenerateBox { .. })
        ));
        assert!(matches!(
            kuhn_triangulate(&[(0.5, 1.0)], &[2]),
            Err(MeshError::OriginNotOnGrid { .. })
        ));
    }
}
