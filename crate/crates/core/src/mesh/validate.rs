use std::collections::BTreeSet;
use std::fmt;

use super::Triangulation;

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    NoOriginVertex,
    AffineDependence { simplex: usize },
    OriginNotFirst { simplex: usize },
    FacetOverused { facet: Vec<usize>, count: usize },
    InteriorBoundaryFacet { facet: Vec<usize> },
    Overlap { first: usize, second: usize },
    VolumeMismatch { covered: f64, expected: f64 },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NoOriginVertex => write!(f, "the origin is not a vertex"),
            Diagnostic::AffineDependence { simplex } => {
                write!(f, "simplex {simplex} has affinely dependent vertices")
            }
            Diagnostic::OriginNotFirst { simplex } => {
                write!(f, "simplex {simplex} contains the origin but does not list it first")
            }
            Diagnostic::FacetOverused { facet, count } => {
                write!(f, "facet {facet:?} is shared by {count} simplexes")
            }
            Diagnostic::InteriorBoundaryFacet { facet } => {
                write!(f, "facet {facet:?} has a single neighbor but is not on the boundary")
            }
            Diagnostic::Overlap { first, second } => {
                write!(f, "simplexes {first} and {second} overlap")
            }
            Diagnostic::VolumeMismatch { covered, expected } => {
                write!(f, "simplexes cover volume {covered}, bounding box has {expected}")
            }
        }
    }
}

pub(super) fn validate(mesh: &Triangulation) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let origin = mesh.origin_vertex();
    if origin.is_none() {
        out.push(Diagnostic::NoOriginVertex);
    }
    for (i, s) in mesh.simplices().iter().enumerate() {
        if s.x_inv.is_none() {
            out.push(Diagnostic::AffineDependence { simplex: i });
        }
        if let Some(o) = origin {
            if s.vertices[1..].contains(&o) {
                out.push(Diagnostic::OriginNotFirst { simplex: i });
            }
        }
    }

    let mut facets: Vec<(&Vec<usize>, &Vec<usize>)> = mesh.facet_map().iter().collect();
    facets.sort();
    for (facet, owners) in facets {
        if owners.len() > 2 {
            out.push(Diagnostic::FacetOverused {
                facet: facet.clone(),
                count: owners.len(),
            });
        } else if owners.len() == 1 && !mesh.facet_on_box_boundary(facet) {
            out.push(Diagnostic::InteriorBoundaryFacet { facet: facet.clone() });
        }
    }

    let mut pairs = BTreeSet::new();
    for bucket in &mesh.buckets.buckets {
        for (a_pos, &a) in bucket.iter().enumerate() {
            for &b in &bucket[a_pos + 1..] {
                let key = (a.min(b), a.max(b));
                if !pairs.contains(&key) && overlaps(mesh, a, b) {
                    pairs.insert(key);
                }
            }
        }
    }
    out.extend(pairs.into_iter().map(|(first, second)| Diagnostic::Overlap { first, second }));

    let (lo, hi) = mesh.bounds();
    let expected: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let covered = mesh.total_volume();
    if (covered - expected).abs() > 1e-9 * expected.max(1e-300) {
        out.push(Diagnostic::VolumeMismatch { covered, expected });
    }
    out
}

/// Interiors intersect if a vertex or the centroid of one lies strictly inside the other.
fn overlaps(mesh: &Triangulation, a: usize, b: usize) -> bool {
    let strictly_inside = |host: usize, x: &[f64]| {
        mesh.simplex(host).x_inv.is_some()
            && mesh
                .barycentric_unchecked(host, x)
                .iter()
                .all(|&l| l > 1e-9)
    };
    let probes = |s: usize| {
        let mut pts: Vec<Vec<f64>> = mesh
            .simplex(s)
            .vertices
            .iter()
            .map(|&v| mesh.vertex(v).to_vec())
            .collect();
        pts.push(mesh.centroid(s));
        pts
    };
    probes(b).iter().any(|x| strictly_inside(a, x)) || probes(a).iter().any(|x| strictly_inside(b, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::kuhn_triangulate;

    fn parts(t: &Triangulation) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        let f = t.to_file();
        (f.vertices, f.simplexes)
    }

    #[test]
    fn detects_duplicated_vertex() {
        let t = kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[2, 2]).unwrap();
        let (v, mut s) = parts(&t);
        s[2][2] = s[2][1];
        let bad = Triangulation::from_parts(v, s, Default::default(), None).unwrap();
        assert!(bad
            .validate()
            .contains(&Diagnostic::AffineDependence { simplex: 2 }));
    }

    #[test]
    fn detects_origin_out_of_position() {
        let t = kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[2, 2]).unwrap();
        let (v, mut s) = parts(&t);
        let origin = t.origin_vertex().unwrap();
        let i = s.iter().position(|x| x[0] == origin).unwrap();
        s[i].swap(0, 1);
        let bad = Triangulation::from_parts(v, s, Default::default(), None).unwrap();
        assert!(bad.validate().contains(&Diagnostic::OriginNotFirst { simplex: i }));
    }

    #[test]
    fn detects_overlap_and_missing_simplex() {
        let t = kuhn_triangulate(&[(-1.0, 1.0), (-1.0, 1.0)], &[2, 2]).unwrap();
        let (v, mut s) = parts(&t);
        s.push(s[3].clone());
        let bad = Triangulation::from_parts(v.clone(), s, Default::default(), None).unwrap();
        let d = bad.validate();
        assert!(d.contains(&Diagnostic::Overlap { first: 3, second: 8 }));
        assert!(d.iter().any(|x| matches!(x, Diagnostic::VolumeMismatch { .. })));

        let (_, mut s) = parts(&t);
        s.remove(0);
        let holed = Triangulation::from_parts(v, s, Default::default(), None).unwrap();
        let d = holed.validate();
        assert!(d.iter().any(|x| matches!(x, Diagnostic::InteriorBoundaryFacet { .. })));
    }

    #[test]
    fn detects_missing_origin() {
        let t = kuhn_triangulate(&[(0.0, 1.0), (0.0, 1.0)], &[1, 1]).unwrap();
        let (mut v, s) = parts(&t);
        for x in &mut v {
            x[0] += 0.5;
        }
        let shifted = Triangulation::from_parts(v, s, Default::default(), None).unwrap();
        assert!(shifted.validate().contains(&Diagnostic::NoOriginVertex));
    }
}
