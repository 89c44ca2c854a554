use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SurfacePlaceCell;
use crate::scene_graph::{Layer, NodeId, SceneGraph};

/// Traversable places and the center-distance edges between them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NavGraph {
    pub centers: BTreeMap<usize, Vector3<f64>>,
    pub labels: BTreeMap<usize, String>,
    /// Sorted neighbour lists with edge weights.
    pub edges: BTreeMap<usize, Vec<(usize, f64)>>,
}

impl NavGraph {
    fn from_parts<'a>(
        nodes: impl Iterator<Item = (usize, Vector3<f64>, &'a str)>,
        pairs: impl Iterator<Item = (usize, usize)>,
        traversable: &BTreeSet<String>,
    ) -> Self {
        let mut g = NavGraph::default();
        for (id, c, label) in nodes {
            if traversable.contains(label) {
                g.centers.insert(id, c);
                g.labels.insert(id, label.to_string());
                g.edges.insert(id, Vec::new());
            }
        }
        for (a, b) in pairs {
            if a == b {
                continue;
            }
            if let (Some(ca), Some(cb)) = (g.centers.get(&a), g.centers.get(&b)) {
                let w = (ca - cb).norm();
                g.edges.get_mut(&a).expect("node present").push((b, w));
                g.edges.get_mut(&b).expect("node present").push((a, w));
            }
        }
        for list in g.edges.values_mut() {
            list.sort_by_key(|e| e.0);
            list.dedup_by_key(|e| e.0);
        }
        g
    }

    /// Cells whose label is traversable, linked where both ends are.
    pub fn from_cells(cells: &[SurfacePlaceCell], traversable: &BTreeSet<String>) -> Self {
        Self::from_parts(
            cells.iter().map(|c| (c.id, c.center, c.label.as_str())),
            cells.iter().flat_map(|c| c.neighbors.iter().map(move |&n| (c.id, n))),
            traversable,
        )
    }

    /// Navigation graph over a scene graph's SURFACE_PLACE layer; cell ids
    /// are place indices.
    pub fn from_scene_graph(graph: &SceneGraph, traversable: &BTreeSet<String>) -> Self {
        Self::from_parts(
            graph.layer_nodes(Layer::SurfacePlace).map(|n| (n.id.index() as usize, n.position, n.class_label.as_str())),
            graph.adjacency.iter().filter(|(a, b)| a.layer() == Layer::SurfacePlace && b.layer() == Layer::SurfacePlace).map(
                |(a, b): &(NodeId, NodeId)| (a.index() as usize, b.index() as usize),
            ),
            traversable,
        )
    }

    pub fn contains(&self, id: usize) -> bool {
        self.centers.contains_key(&id)
    }

    pub fn center(&self, id: usize) -> Option<&Vector3<f64>> {
        self.centers.get(&id)
    }

    pub fn neighbors(&self, id: usize) -> &[(usize, f64)] {
        self.edges.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(Vec::len).sum::<usize>() / 2
    }

    /// Traversable cell with the nearest center (ties by lowest id).
    pub fn nearest(&self, p: &Vector3<f64>) -> Option<usize> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (&id, c) in &self.centers {
            let d = (c - p).norm_squared();
            if d < best_d {
                best = Some(id);
                best_d = d;
            }
        }
        best
    }

    /// Cells reachable from `start` without entering `avoid`.
    pub fn reachable(&self, start: usize, avoid: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        if !self.contains(start) || avoid.contains(&start) {
            return seen;
        }
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(u) = stack.pop() {
            for &(v, _) in self.neighbors(u) {
                if !avoid.contains(&v) && seen.insert(v) {
                    stack.push(v);
                }
            }
        }
        seen
    }
}
