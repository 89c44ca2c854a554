//! Surface places: label-pure, evenly spaced terrain cells and the
//! navigation graph over them.

mod nav;

pub use nav::NavGraph;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene_graph::{AttrValue, NodeId, SceneGraph, SceneNode};

pub const DEFAULT_PLACE_SPACING: f64 = 5.0;
pub const DEFAULT_MAX_ITERS: usize = 50;
const SPLIT_FACTOR: f64 = 1.5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TerrainMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// `None` marks an unlabeled vertex.
    pub labels: Vec<Option<String>>,
    pub adjacency: Vec<(usize, usize)>,
}

impl TerrainMesh {
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.vertices.len() {
            return Err(Error::InvalidParameter(format!(
                "{} labels for {} vertices",
                self.labels.len(),
                self.vertices.len()
            )));
        }
        if let Some((a, b)) = self.adjacency.iter().find(|(a, b)| *a >= self.vertices.len() || *b >= self.vertices.len()) {
            return Err(Error::InvalidParameter(format!("mesh edge ({a}, {b}) out of range")));
        }
        Ok(())
    }

    /// Regular grid mesh with 4-neighbour edges; `label(x, y)` picks each
    /// vertex's label.
    pub fn grid(nx: usize, ny: usize, pitch: f64, label: impl Fn(f64, f64) -> Option<String>) -> Self {
        let mut m = TerrainMesh::default();
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = (i as f64 * pitch, j as f64 * pitch);
                m.vertices.push(Vector3::new(x, y, 0.0));
                m.labels.push(label(x, y));
                let v = j * nx + i;
                if i > 0 {
                    m.adjacency.push((v - 1, v));
                }
                if j > 0 {
                    m.adjacency.push((v - nx, v));
                }
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePlaceCell {
    pub id: usize,
    pub center: Vector3<f64>,
    pub vertex_ids: BTreeSet<usize>,
    pub label: String,
    pub neighbors: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub cells: Vec<SurfacePlaceCell>,
    pub iterations: usize,
    pub converged: bool,
}

/// Connected components of same-label edges; `None` for unlabeled vertices.
fn label_components(mesh: &TerrainMesh) -> Vec<Option<usize>> {
    let n = mesh.vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in &mesh.adjacency {
        if mesh.labels[a].is_some() && mesh.labels[a] == mesh.labels[b] {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut ids = BTreeMap::new();
    (0..n)
        .map(|v| {
            mesh.labels[v].as_ref()?;
            let root = find(&mut parent, v);
            let next = ids.len();
            Some(*ids.entry(root).or_insert(next))
        })
        .collect()
}

/// Farthest-point seeds inside one component, stopping once every member is
/// within `radius` of a seed. Starts from the lowest vertex id.
fn farthest_point_seeds(mesh: &TerrainMesh, members: &[usize], radius: f64) -> Vec<usize> {
    let mut seeds = vec![members[0]];
    let mut dist: Vec<f64> = members.iter().map(|&v| (mesh.vertices[v] - mesh.vertices[members[0]]).norm()).collect();
    loop {
        let (far, d) = dist.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b });
        if d <= radius {
            return seeds;
        }
        let s = members[far];
        seeds.push(s);
        for (i, &v) in members.iter().enumerate() {
            dist[i] = dist[i].min((mesh.vertices[v] - mesh.vertices[s]).norm());
        }
    }
}

/// Lloyd-style partition of labeled vertices into places of roughly
/// `spacing` diameter spacing. Vertices only join centers of their own
/// label-connected component, so cells are label-pure and never straddle a
/// gap in that label.
pub fn partition(mesh: &TerrainMesh, spacing: f64, max_iters: usize) -> Result<Partition> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidParameter(format!("place spacing {spacing}")));
    }
    mesh.validate()?;
    let comp = label_components(mesh);
    let n_comp = comp.iter().flatten().max().map_or(0, |c| c + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
    for (v, c) in comp.iter().enumerate() {
        if let Some(c) = c {
            members[*c].push(v);
        }
    }
    // Centers are vertex ids, kept per component.
    let mut centers: Vec<Vec<usize>> =
        members.iter().map(|m| farthest_point_seeds(mesh, m, spacing / std::f64::consts::SQRT_2)).collect();

    let mut assignment: Vec<Option<(usize, usize)>> = vec![None; mesh.vertices.len()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let next: Vec<Option<(usize, usize)>> = (0..mesh.vertices.len())
            .map(|v| {
                let c = comp[v]?;
                let p = mesh.vertices[v];
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (k, &s) in centers[c].iter().enumerate() {
                    let d = (mesh.vertices[s] - p).norm_squared();
                    if d < best_d {
                        best = k;
                        best_d = d;
                    }
                }
                Some((c, best))
            })
            .collect();
        let stable = next == assignment;
        assignment = next;

        let mut changed = false;
        for c in 0..n_comp {
            let mut cells: Vec<Vec<usize>> = vec![Vec::new(); centers[c].len()];
            for &v in &members[c] {
                cells[assignment[v].expect("member assigned").1].push(v);
            }
            let mut new_centers = Vec::new();
            for cell in cells.iter().filter(|cell| !cell.is_empty()) {
                let mean = cell.iter().map(|&v| mesh.vertices[v]).sum::<Vector3<f64>>() / cell.len() as f64;
                let snapped = nearest(mesh, cell, &mean);
                let far = cell.iter().copied().fold((snapped, 0.0), |b, v| {
                    let d = (mesh.vertices[v] - mesh.vertices[snapped]).norm();
                    if d > b.1 {
                        (v, d)
                    } else {
                        b
                    }
                });
                new_centers.push(snapped);
                if far.1 > SPLIT_FACTOR * spacing {
                    new_centers.push(far.0);
                }
            }
            if new_centers != centers[c] {
                changed = true;
                centers[c] = new_centers;
            }
        }
        if stable && !changed {
            converged = true;
            break;
        }
    }
    if !converged {
        // Final assignment against the last centers.
        for v in 0..mesh.vertices.len() {
            if let Some(c) = comp[v] {
                let p = mesh.vertices[v];
                let k = (0..centers[c].len())
                    .min_by(|&a, &b| {
                        (mesh.vertices[centers[c][a]] - p)
                            .norm_squared()
                            .total_cmp(&(mesh.vertices[centers[c][b]] - p).norm_squared())
                    })
                    .expect("component has a center");
                assignment[v] = Some((c, k));
            }
        }
    }

    let mut cells_by_key: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for (v, a) in assignment.iter().enumerate() {
        if let Some(key) = a {
            cells_by_key.entry(*key).or_default().insert(v);
        }
    }
    let mut raw: Vec<(usize, BTreeSet<usize>)> =
        cells_by_key.into_iter().map(|((c, k), vs)| (centers[c][k], vs)).collect();
    raw.sort_by_key(|(_, vs)| *vs.iter().next().expect("non-empty cell"));
    let mut cell_of = vec![usize::MAX; mesh.vertices.len()];
    let mut cells: Vec<SurfacePlaceCell> = raw
        .into_iter()
        .enumerate()
        .map(|(id, (center, vs))| {
            for &v in &vs {
                cell_of[v] = id;
            }
            SurfacePlaceCell {
                id,
                center: mesh.vertices[center],
                label: mesh.labels[center].clone().expect("labeled center"),
                vertex_ids: vs,
                neighbors: BTreeSet::new(),
            }
        })
        .collect();
    for &(a, b) in &mesh.adjacency {
        let (ca, cb) = (cell_of[a], cell_of[b]);
        if ca != usize::MAX && cb != usize::MAX && ca != cb {
            cells[ca].neighbors.insert(cb);
            cells[cb].neighbors.insert(ca);
        }
    }
    Ok(Partition { cells, iterations, converged })
}

fn nearest(mesh: &TerrainMesh, cell: &[usize], p: &Vector3<f64>) -> usize {
    let mut best = cell[0];
    let mut best_d = f64::INFINITY;
    for &v in cell {
        let d = (mesh.vertices[v] - p).norm_squared();
        if d < best_d {
            best = v;
            best_d = d;
        }
    }
    best
}

/// Adds cells as SURFACE_PLACE nodes (index `offset + cell id`) with their
/// adjacency.
pub fn add_places_to_graph(graph: &mut SceneGraph, cells: &[SurfacePlaceCell], offset: u64) {
    for c in cells {
        graph.add_node(
            SceneNode::new(NodeId::place(offset + c.id as u64), c.label.clone(), c.center)
                .with_attr("vertices", AttrValue::Num(c.vertex_ids.len() as f64)),
        );
    }
    for c in cells {
        for &n in c.neighbors.range(c.id + 1..) {
            graph.add_adjacency(NodeId::place(offset + c.id as u64), NodeId::place(offset + n as u64));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> TerrainMesh {
        TerrainMesh::grid(n, n, 1.0, |_, _| Some("grass".into()))
    }

    fn assert_true_partition(mesh: &TerrainMesh, cells: &[SurfacePlaceCell]) {
        let mut seen = BTreeSet::new();
        for c in cells {
            for &v in &c.vertex_ids {
                assert!(seen.insert(v), "vertex {v} in two cells");
                assert_eq!(mesh.labels[v].as_deref(), Some(c.label.as_str()));
            }
            for &n in &c.neighbors {
                assert!(cells[n].neighbors.contains(&c.id));
            }
        }
        let labeled: BTreeSet<usize> = (0..mesh.vertices.len()).filter(|&v| mesh.labels[v].is_some()).collect();
        assert_eq!(seen, labeled);
    }

    #[test]
    fn uniform_grid_is_even() {
        let mesh = uniform(20);
        let p = partition(&mesh, 5.0, 50).unwrap();
        assert!(p.converged);
        assert_true_partition(&mesh, &p.cells);
        let sizes: Vec<usize> = p.cells.iter().map(|c| c.vertex_ids.len()).collect();
        let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        assert!(hi as f64 / lo as f64 <= 3.0, "{sizes:?}");
        for c in &p.cells {
            let nn = p.cells.iter().filter(|o| o.id != c.id).map(|o| (o.center - c.center).norm()).fold(f64::INFINITY, f64::min);
            assert!((2.5..=10.0).contains(&nn), "cell {} nearest neighbour {nn}", c.id);
        }
    }

    #[test]
    fn single_vertex() {
        let mesh = TerrainMesh { vertices: vec![Vector3::new(1.0, 2.0, 0.0)], labels: vec![Some("road".into())], adjacency: vec![] };
        let p = partition(&mesh, 5.0, 50).unwrap();
        assert_eq!(p.cells.len(), 1);
        assert_eq!(p.cells[0].vertex_ids, BTreeSet::from([0]));
    }

    #[test]
    fn labels_never_mix() {
        let mesh = TerrainMesh::grid(20, 10, 1.0, |x, _| Some(if x < 9.5 { "road" } else { "grass" }.into()));
        let p = partition(&mesh, 5.0, 50).unwrap();
        assert_true_partition(&mesh, &p.cells);
        assert!(p.cells.iter().any(|c| c.label == "road") && p.cells.iter().any(|c| c.label == "grass"));
    }

    #[test]
    fn unlabeled_mesh_is_empty() {
        let mesh = TerrainMesh::grid(5, 5, 1.0, |_, _| None);
        assert!(partition(&mesh, 5.0, 50).unwrap().cells.is_empty());
        assert!(partition(&uniform(3), 0.0, 50).is_err());
    }

    #[test]
    fn deterministic() {
        let mesh = TerrainMesh::grid(17, 23, 1.0, |x, y| Some(if x + y < 15.0 { "road" } else { "rocks" }.into()));
        assert_eq!(partition(&mesh, 4.0, 50).unwrap(), partition(&mesh, 4.0, 50).unwrap());
    }

    #[test]
    fn places_enter_scene_graph() {
        let mesh = uniform(10);
        let p = partition(&mesh, 5.0, 50).unwrap();
        let mut g = SceneGraph::new();
        add_places_to_graph(&mut g, &p.cells, 100);
        assert!(g.validate().is_empty());
        assert_eq!(g.nodes.len(), p.cells.len());
        let edges: usize = p.cells.iter().map(|c| c.neighbors.len()).sum();
        assert_eq!(g.adjacency.len() * 2, edges);
    }
}
