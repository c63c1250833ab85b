use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{facet_key, MeshError, Triangulation, GEO_TOL};

/// A set of simplexes of one triangulation, identified by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    ids: BTreeSet<usize>,
}

impl Region {
    pub fn new(ids: impl IntoIterator<Item = usize>) -> Self {
        Region {
            ids: ids.into_iter().collect(),
        }
    }

    pub fn all(mesh: &Triangulation) -> Self {
        Self::new(0..mesh.num_simplices())
    }

    /// The simplexes covering an axis-aligned box; fails unless the box is
    /// exactly a union of simplexes.
    pub fn from_box(mesh: &Triangulation, extents: &[(f64, f64)]) -> Result<Self, MeshError> {
        if extents.len() != mesh.dim() {
            return Err(MeshError::DimensionMismatch(mesh.dim(), extents.len()));
        }
        let inside = |x: &[f64]| {
            x.iter().zip(extents).all(|(&c, &(lo, hi))| {
                let tol = GEO_TOL * (hi - lo).abs().max(1.0);
                c >= lo - tol && c <= hi + tol
            })
        };
        let ids: BTreeSet<usize> = (0..mesh.num_simplices())
            .filter(|&i| inside(&mesh.centroid(i)))
            .collect();
        for &i in &ids {
            if !mesh.simplex(i).vertices.iter().all(|&v| inside(mesh.vertex(v))) {
                return Err(MeshError::NotAUnion(format!(
                    "simplex {i} straddles the box boundary"
                )));
            }
        }
        let covered: f64 = ids.iter().map(|&i| mesh.simplex(i).volume).sum();
        let volume: f64 = extents.iter().map(|(lo, hi)| hi - lo).product();
        if (covered - volume).abs() > 1e-9 * volume.max(1e-300) {
            return Err(MeshError::NotAUnion(format!(
                "simplexes cover volume {covered}, box has {volume}"
            )));
        }
        Ok(Region { ids })
    }

    pub fn ids(&self) -> &BTreeSet<usize> {
        &self.ids
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.ids.is_subset(&other.ids)
    }

    pub fn complement(&self, mesh: &Triangulation) -> Region {
        Region::new(shell_indices(mesh, self))
    }

    pub fn vertices(&self, mesh: &Triangulation) -> BTreeSet<usize> {
        self.ids
            .iter()
            .flat_map(|&i| mesh.simplex(i).vertices.iter().copied())
            .collect()
    }

    /// Vertices lying on facets that belong to exactly one simplex of the region.
    pub fn boundary_vertices(&self, mesh: &Triangulation) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &i in &self.ids {
            let s = &mesh.simplex(i).vertices;
            for skip in 0..s.len() {
                let key = facet_key(s, skip);
                let inside = mesh.facet_map()[&key]
                    .iter()
                    .filter(|&&j| self.ids.contains(&j))
                    .count();
                if inside == 1 {
                    out.extend(key);
                }
            }
        }
        out
    }

    /// Whether the region is connected through shared facets.
    pub fn is_connected(&self, mesh: &Triangulation) -> bool {
        let Some(&start) = self.ids.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in mesh.neighbors(i) {
                if self.ids.contains(&j) && seen.insert(j) {
                    stack.push(j);
                }
            }
        }
        seen.len() == self.ids.len()
    }

    pub fn volume(&self, mesh: &Triangulation) -> f64 {
        self.ids.iter().map(|&i| mesh.simplex(i).volume).sum()
    }
}

/// Ids of the simplexes outside `region`, in increasing order.
pub fn shell_indices(mesh: &Triangulation, region: &Region) -> Vec<usize> {
    (0..mesh.num_simplices()).filter(|i| !region.contains(*i)).collect()
}
