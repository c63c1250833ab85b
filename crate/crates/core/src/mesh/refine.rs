use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{split_lines, tensor_triangulate, MeshError, Triangulation};

pub(super) fn refine_all(mesh: &Triangulation) -> Result<Triangulation, MeshError> {
    let Some(lines) = mesh.lines() else {
        let all: Vec<usize> = (0..mesh.num_simplices()).collect();
        return refine_selected(mesh, &all);
    };
    let everywhere: Vec<(f64, f64)> = lines.iter().map(|l| (l[0], l[l.len() - 1])).collect();
    let halved = split_lines(lines, &everywhere);
    let mut fine = tensor_triangulate(&halved, 2 * mesh.fan().unwrap_or(0))?;
    if !mesh.tags().is_empty() {
        let parent: Vec<usize> = (0..fine.num_simplices())
            .map(|i| mesh.locate(&fine.centroid(i)))
            .collect::<Result<_, _>>()?;
        fine.tags = inherit_tags(mesh.tags(), &parent);
    }
    Ok(fine)
}

fn inherit_tags(tags: &BTreeMap<String, Vec<usize>>, parent: &[usize]) -> BTreeMap<String, Vec<usize>> {
    tags.iter()
        .map(|(name, ids)| {
            let set: BTreeSet<usize> = ids.iter().copied().collect();
            let children = (0..parent.len()).filter(|i| set.contains(&parent[*i])).collect();
            (name.clone(), children)
        })
        .collect()
}

fn longest_edge(mesh_vertices: &[Vec<f64>], simplex: &[usize]) -> (usize, usize) {
    let mut best: Option<((usize, usize), f64)> = None;
    for (a_pos, &a) in simplex.iter().enumerate() {
        for &b in &simplex[a_pos + 1..] {
            let len: f64 = mesh_vertices[a]
                .iter()
                .zip(&mesh_vertices[b])
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            let key = (a.min(b), a.max(b));
            best = match best {
                Some((k, l)) if l > len * (1.0 + 1e-12) => Some((k, l)),
                Some((k, l)) if (l - len).abs() <= l * 1e-12 && k < key => Some((k, l)),
                _ => Some((key, len)),
            };
        }
    }
    best.expect("simplex has at least one edge").0
}

pub(super) fn refine_selected(mesh: &Triangulation, which: &[usize]) -> Result<Triangulation, MeshError> {
    let mut vertices = mesh.vertices().to_vec();
    let mut simplexes: Vec<Vec<usize>> = mesh.simplices().iter().map(|s| s.vertices.clone()).collect();
    let mut parent: Vec<usize> = (0..simplexes.len()).collect();

    let mut selected: Vec<usize> = which.to_vec();
    selected.sort_unstable();
    selected.dedup();
    if let Some(&bad) = selected.iter().find(|&&i| i >= simplexes.len()) {
        return Err(MeshError::Invalid(format!("no simplex with id {bad}")));
    }
    let mut edges: Vec<(usize, usize)> = selected
        .iter()
        .map(|&i| longest_edge(&vertices, &simplexes[i]))
        .collect();
    edges.dedup();

    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    for (a, b) in edges {
        if midpoints.contains_key(&(a, b)) {
            continue;
        }
        let m = vertices.len();
        let mid = vertices[a].iter().zip(&vertices[b]).map(|(p, q)| 0.5 * (p + q)).collect();
        vertices.push(mid);
        midpoints.insert((a, b), m);

        let mut next = Vec::with_capacity(simplexes.len() + 8);
        let mut next_parent = Vec::with_capacity(simplexes.len() + 8);
        for (s, &p) in simplexes.iter().zip(&parent) {
            let pa = s.iter().position(|&v| v == a);
            let pb = s.iter().position(|&v| v == b);
            if let (Some(pa), Some(pb)) = (pa, pb) {
                // replacing in place keeps an origin vertex at position 0
                let mut first = s.clone();
                first[pb] = m;
                let mut second = s.clone();
                second[pa] = m;
                next.push(first);
                next.push(second);
                next_parent.push(p);
                next_parent.push(p);
            } else {
                next.push(s.clone());
                next_parent.push(p);
            }
        }
        simplexes = next;
        parent = next_parent;
    }
    let tags = inherit_tags(mesh.tags(), &parent);
    Triangulation::from_parts(vertices, simplexes, tags, None)
}
