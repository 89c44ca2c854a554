//! Merging of duplicate scene nodes seen by several robots.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::interpolate::origin_robot;
use crate::scene_graph::{AttrValue, Layer, NodeId, SceneGraph, SceneNode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeParams {
    pub tau_object: f64,
    pub tau_place: f64,
    pub tau_region: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self { tau_object: 2.0, tau_place: 5.0, tau_region: 40.0 }
    }
}

impl MergeParams {
    fn tau(&self, layer: Layer) -> Option<f64> {
        match layer {
            Layer::Object => Some(self.tau_object),
            Layer::SurfacePlace => Some(self.tau_place),
            Layer::Region => Some(self.tau_region),
            Layer::Agent => None,
        }
    }
}

/// Robots that contributed to a node: the `robots` list of an earlier
/// merge, else the single origin robot, else none.
pub fn contributing_robots(node: &SceneNode) -> BTreeSet<u32> {
    match node.attrs.get("robots") {
        Some(AttrValue::Str(s)) => s.split(',').filter_map(|r| r.trim().parse().ok()).collect(),
        _ => origin_robot(node).into_iter().collect(),
    }
}

struct Cluster {
    position: Vector3<f64>,
    count: f64,
    robots: BTreeSet<u32>,
    members: Vec<Vector3<f64>>,
}

impl Cluster {
    /// Single-linkage distance, or centroid distance when that is smaller.
    fn link(&self, other: &Cluster) -> f64 {
        let mut d = (self.position - other.position).norm();
        for a in &self.members {
            for b in &other.members {
                d = d.min((a - b).norm());
            }
        }
        d
    }
}

/// Greedily merges same-layer, same-class nodes closer than the layer's
/// radius, repeating until no pair qualifies. Nodes whose contributing robot
/// sets overlap never merge: one robot does not map an object twice.
///
/// Within a pass, pairs are taken nearest first (ties by id pair) and each
/// node takes part in at most one merge. The survivor is the lower id,
/// placed at the count-weighted centroid.
pub fn merge_nodes(graph: &SceneGraph, params: &MergeParams) -> (SceneGraph, Vec<(NodeId, NodeId)>) {
    let nodes = &graph.nodes;
    let mut clusters: Vec<Cluster> = nodes
        .iter()
        .map(|n| Cluster {
            position: n.position,
            count: n.num_attr("count").filter(|c| *c > 0.0).unwrap_or(1.0),
            robots: contributing_robots(n),
            members: vec![n.position],
        })
        .collect();
    let mut alive = vec![true; nodes.len()];
    let mut log = Vec::new();

    let mut groups: BTreeMap<(Layer, &str), Vec<usize>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if params.tau(n.layer).is_some() {
            groups.entry((n.layer, n.class_label.as_str())).or_default().push(i);
        }
    }
    for members in groups.values_mut() {
        members.sort_by_key(|&i| nodes[i].id);
    }

    loop {
        let mut pairs: Vec<(f64, NodeId, NodeId, usize, usize)> = Vec::new();
        for (&(layer, _), members) in &groups {
            let tau = params.tau(layer).expect("grouped layers have radii");
            let live: Vec<usize> = members.iter().copied().filter(|&i| alive[i]).collect();
            for (x, &i) in live.iter().enumerate() {
                for &j in &live[x + 1..] {
                    if !clusters[i].robots.is_disjoint(&clusters[j].robots) {
                        continue;
                    }
                    let d = clusters[i].link(&clusters[j]);
                    if d < tau {
                        pairs.push((d, nodes[i].id, nodes[j].id, i, j));
                    }
                }
            }
        }
        if pairs.is_empty() {
            break;
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut touched = vec![false; nodes.len()];
        for (_, _, _, i, j) in pairs {
            if touched[i] || touched[j] {
                continue;
            }
            touched[i] = true;
            touched[j] = true;
            let absorbed = std::mem::replace(
                &mut clusters[j],
                Cluster { position: Vector3::zeros(), count: 0.0, robots: BTreeSet::new(), members: Vec::new() },
            );
            let s = &mut clusters[i];
            let total = s.count + absorbed.count;
            s.position = (s.position * s.count + absorbed.position * absorbed.count) / total;
            s.count = total;
            s.robots.extend(absorbed.robots);
            s.members.extend(absorbed.members);
            alive[j] = false;
            log.push((nodes[j].id, nodes[i].id));
        }
    }

    let mut target: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for &(absorbed, survivor) in &log {
        target.insert(absorbed, survivor);
    }
    let resolve = |mut id: NodeId| {
        while let Some(&t) = target.get(&id) {
            id = t;
        }
        id
    };

    let mut out = SceneGraph::new();
    for (i, n) in nodes.iter().enumerate() {
        if !alive[i] {
            continue;
        }
        let mut node = n.clone();
        let c = &clusters[i];
        if c.members.len() > 1 {
            node.position = c.position;
            node.attrs.insert("count".into(), AttrValue::Num(c.count));
            let robots: Vec<String> = c.robots.iter().map(u32::to_string).collect();
            if !robots.is_empty() {
                node.attrs.insert("robots".into(), AttrValue::Str(robots.join(",")));
            }
        }
        out.add_node(node);
    }
    // A survivor keeps its own parent; absorbed nodes' parents fill gaps.
    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for own in [true, false] {
        for &(c, p) in &graph.parents {
            if target.contains_key(&c) != own {
                parent.entry(resolve(c)).or_insert(resolve(p));
            }
        }
    }
    let mut seen_child = BTreeSet::new();
    for &(c, _) in &graph.parents {
        let c = resolve(c);
        if seen_child.insert(c) {
            out.parents.push((c, parent[&c]));
        }
    }
    for &(a, b) in &graph.adjacency {
        let (a, b) = (resolve(a), resolve(b));
        if a != b {
            out.add_adjacency(a, b);
        }
    }
    (out, log)
}
