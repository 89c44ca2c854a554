//! Multi-robot fusion: loop detection across submaps, joint pose-graph
//! optimization, node interpolation and duplicate merging.

pub mod interpolate;
pub mod merge;
pub mod metrics;
pub mod pose_graph;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{average_poses, BetweenMeasurement, NodeKey, Pose3};
use crate::object_map::Submap;
use crate::registration::{largest_agreeing_cluster, register_submaps, ClusterTolerance, ConsistencyParams, LoopClosure};
use crate::scene_graph::{AttrValue, Layer, NodeId, SceneGraph};

pub use interpolate::{interpolate_nodes, DEFAULT_NEIGHBORS};
pub use merge::{merge_nodes, MergeParams};
pub use metrics::{metrics, FusionMetrics, LabeledPoint, MetricsParams};
pub use pose_graph::{optimize, OptimizeReport, OptimizerParams, PoseGraph};

/// Everything one robot contributes to fusion, in its own odometry frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotMap {
    pub name: String,
    pub robot_id: u32,
    pub keyframes: Vec<Pose3>,
    pub submaps: Vec<Submap>,
    /// Scene nodes tagged with a `robot` attribute.
    pub graph: SceneGraph,
}

impl RobotMap {
    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let mut m: RobotMap = serde_json::from_str(s)?;
        for sm in &mut m.submaps {
            sm.robot = m.robot_id;
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("robot map serializes")
    }

    pub fn keyframe_map(&self) -> BTreeMap<NodeKey, Pose3> {
        self.keyframes.iter().enumerate().map(|(i, p)| (NodeKey::new(self.robot_id, i), *p)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    pub registration: ConsistencyParams,
    pub optimizer: OptimizerParams,
    pub merge: MergeParams,
    pub odometry_sigma_trans: f64,
    pub odometry_sigma_rot_deg: f64,
    pub loop_sigma_trans: f64,
    pub loop_sigma_rot_deg: f64,
    pub neighbors: usize,
    /// Agreement radius when seeding each robot's frame from loop closures.
    pub init_tolerance: ClusterTolerance,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            registration: ConsistencyParams::default(),
            optimizer: OptimizerParams::default(),
            merge: MergeParams::default(),
            odometry_sigma_trans: 0.05,
            odometry_sigma_rot_deg: 0.2,
            loop_sigma_trans: 0.3,
            loop_sigma_rot_deg: 2.0,
            neighbors: DEFAULT_NEIGHBORS,
            init_tolerance: ClusterTolerance { translation: 10.0, rotation_deg: 20.0 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionResult {
    pub optimized_poses: BTreeMap<NodeKey, Pose3>,
    /// Initial alignment of each robot's odometry frame to the fused frame.
    pub robot_frames: BTreeMap<u32, Pose3>,
    pub loop_closures: Vec<LoopClosure>,
    pub rejected_edges: Vec<LoopClosure>,
    pub fused_graph: SceneGraph,
    pub merge_log: Vec<(NodeId, NodeId)>,
    /// Submaps re-anchored at their optimized center keyframes.
    pub fused_submaps: Vec<Submap>,
    pub report: OptimizeReport,
}

/// Serializable summary of a fusion run alongside the fused graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionSidecar {
    pub poses: Vec<(NodeKey, Pose3)>,
    pub robot_frames: Vec<(u32, Pose3)>,
    pub loop_closures: Vec<LoopClosure>,
    pub rejected_edges: Vec<LoopClosure>,
    pub merge_log: Vec<(NodeId, NodeId)>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

impl FusionResult {
    pub fn sidecar(&self) -> FusionSidecar {
        FusionSidecar {
            poses: self.optimized_poses.iter().map(|(k, p)| (*k, *p)).collect(),
            robot_frames: self.robot_frames.iter().map(|(k, p)| (*k, *p)).collect(),
            loop_closures: self.loop_closures.clone(),
            rejected_edges: self.rejected_edges.clone(),
            merge_log: self.merge_log.clone(),
            initial_cost: self.report.initial_cost,
            final_cost: self.report.final_cost,
            iterations: self.report.iterations,
        }
    }

    /// Optimized trajectory of one robot, in keyframe order.
    pub fn trajectory(&self, robot: u32) -> Vec<Pose3> {
        self.optimized_poses.range(NodeKey::new(robot, 0)..=NodeKey::new(robot, usize::MAX)).map(|(_, p)| *p).collect()
    }
}

/// Registers every pair of submaps except consecutive submaps of one robot
/// (those share odometry already). Results are in sorted pair order.
pub fn detect_loop_closures(robots: &[RobotMap], p: &ConsistencyParams) -> Vec<LoopClosure> {
    let mut submaps: Vec<&Submap> = robots.iter().flat_map(|r| &r.submaps).collect();
    submaps.sort_by_key(|s| s.id());
    let mut pairs = Vec::new();
    for i in 0..submaps.len() {
        for j in i + 1..submaps.len() {
            let (a, b) = (submaps[i], submaps[j]);
            if a.robot == b.robot && b.index <= a.index + 1 {
                continue;
            }
            pairs.push((a, b));
        }
    }
    pairs.par_iter().filter_map(|(a, b)| register_submaps(a, b, p)).collect()
}

fn submap_lookup(robots: &[RobotMap]) -> BTreeMap<(u32, usize), &Submap> {
    robots.iter().flat_map(|r| &r.submaps).map(|s| (s.id(), s)).collect()
}

/// Frame of the `to` robot expressed through the `from` robot's frame:
/// `F_to = F_from ∘ C_from ∘ T⁻¹ ∘ C_to⁻¹`.
fn frame_candidate(frame_from: &Pose3, from: &Submap, to: &Submap, lc: &LoopClosure) -> Pose3 {
    frame_from.compose(&from.center_pose).compose(&lc.between()).compose(&to.center_pose.inverse())
}

/// Seeds every robot's odometry frame in the frame of the lowest robot id.
/// Robots are added one at a time, each from the largest agreeing cluster
/// of loop-closure candidates against robots already placed.
pub fn initial_frames(robots: &[RobotMap], closures: &[LoopClosure], tol: ClusterTolerance) -> BTreeMap<u32, Pose3> {
    let lookup = submap_lookup(robots);
    let ids: BTreeSet<u32> = robots.iter().map(|r| r.robot_id).collect();
    let mut frames = BTreeMap::new();
    let Some(&first) = ids.iter().next() else { return frames };
    frames.insert(first, Pose3::identity());
    loop {
        let mut best: Option<(usize, u32, Pose3)> = None;
        for &r in ids.iter().filter(|r| !frames.contains_key(*r)) {
            let mut candidates = Vec::new();
            for lc in closures {
                let (Some(a), Some(b)) = (lookup.get(&lc.from_submap), lookup.get(&lc.to_submap)) else { continue };
                if b.robot == r {
                    if let Some(fa) = frames.get(&a.robot) {
                        candidates.push(frame_candidate(fa, a, b, lc));
                    }
                } else if a.robot == r {
                    if let Some(fb) = frames.get(&b.robot) {
                        let inv = LoopClosure { relative: lc.between(), ..lc.clone() };
                        candidates.push(frame_candidate(fb, b, a, &inv));
                    }
                }
            }
            if candidates.is_empty() {
                continue;
            }
            let cluster = largest_agreeing_cluster(&candidates, tol);
            let members: Vec<Pose3> = cluster.iter().map(|&i| candidates[i]).collect();
            let Some(avg) = average_poses(&members) else { continue };
            if best.as_ref().is_none_or(|(n, _, _)| cluster.len() > *n) {
                best = Some((cluster.len(), r, avg));
            }
        }
        match best {
            Some((_, r, f)) => {
                frames.insert(r, f);
            }
            None => break,
        }
    }
    frames
}

/// Renumbers each robot's nodes into one graph; per-layer indices are
/// assigned in robot order. Every node keeps a `robot` attribute.
pub fn combine_graphs(robots: &[RobotMap]) -> SceneGraph {
    let mut out = SceneGraph::new();
    let mut next: BTreeMap<Layer, u64> = BTreeMap::new();
    for r in robots {
        let mut ids: Vec<NodeId> = r.graph.nodes.iter().map(|n| n.id).collect();
        ids.sort();
        let mut remap = BTreeMap::new();
        for id in ids {
            let c = next.entry(id.layer()).or_insert(0);
            remap.insert(id, NodeId(id.layer(), *c));
            *c += 1;
        }
        for n in &r.graph.nodes {
            let mut node = n.clone();
            node.id = remap[&n.id];
            node.attrs.entry("robot".into()).or_insert(AttrValue::Num(r.robot_id as f64));
            out.add_node(node);
        }
        for (c, p) in &r.graph.parents {
            if let (Some(c), Some(p)) = (remap.get(c), remap.get(p)) {
                out.set_parent(*c, *p);
            }
        }
        for (a, b) in &r.graph.adjacency {
            if let (Some(a), Some(b)) = (remap.get(a), remap.get(b)) {
                out.add_adjacency(*a, *b);
            }
        }
    }
    out
}

/// Builds the joint pose graph: odometry chains in the seeded frames plus
/// one loop edge per closure, anchored at the submap-center keyframes.
pub fn build_pose_graph(
    robots: &[RobotMap],
    closures: &[LoopClosure],
    frames: &BTreeMap<u32, Pose3>,
    params: &FusionParams,
) -> Result<PoseGraph> {
    let lookup = submap_lookup(robots);
    let mut g = PoseGraph::default();
    for r in robots {
        let frame = frames.get(&r.robot_id).copied().unwrap_or_else(Pose3::identity);
        for (i, p) in r.keyframes.iter().enumerate() {
            g.nodes.insert(NodeKey::new(r.robot_id, i), frame.compose(p));
        }
        for (i, w) in r.keyframes.windows(2).enumerate() {
            g.odometry.push(BetweenMeasurement::with_sigmas(
                NodeKey::new(r.robot_id, i),
                NodeKey::new(r.robot_id, i + 1),
                w[0].between(&w[1]),
                params.odometry_sigma_rot_deg.to_radians(),
                params.odometry_sigma_trans,
            )?);
        }
    }
    for lc in closures {
        let a = lookup.get(&lc.from_submap).ok_or_else(|| Error::UnknownNode(format!("{:?}", lc.from_submap)))?;
        let b = lookup.get(&lc.to_submap).ok_or_else(|| Error::UnknownNode(format!("{:?}", lc.to_submap)))?;
        g.loops.push(BetweenMeasurement::with_sigmas(
            NodeKey::new(a.robot, a.keyframe),
            NodeKey::new(b.robot, b.keyframe),
            lc.between(),
            params.loop_sigma_rot_deg.to_radians(),
            params.loop_sigma_trans,
        )?);
    }
    Ok(g)
}

/// Full fusion of several robot maps given their loop closures.
pub fn fuse(robots: &[RobotMap], closures: &[LoopClosure], params: &FusionParams) -> Result<FusionResult> {
    let frames = initial_frames(robots, closures, params.init_tolerance);
    let graph = build_pose_graph(robots, closures, &frames, params)?;
    let report = optimize(&graph, &params.optimizer)?;

    let old: BTreeMap<NodeKey, Pose3> = robots.iter().flat_map(|r| r.keyframe_map()).collect();
    let combined = combine_graphs(robots);
    let corrected = interpolate_nodes(&combined, &old, &report.poses, params.neighbors)?;
    let (mut fused, merge_log) = merge_nodes(&corrected, &params.merge);
    fused.canonicalize();
    let violations = fused.validate();
    if let Some(v) = violations.first() {
        return Err(Error::InvalidGraph(v.to_string()));
    }

    let fused_submaps = robots
        .iter()
        .flat_map(|r| &r.submaps)
        .map(|s| Submap { center_pose: report.poses[&NodeKey::new(s.robot, s.keyframe)], ..s.clone() })
        .collect();
    Ok(FusionResult {
        optimized_poses: report.poses.clone(),
        robot_frames: frames,
        loop_closures: closures.to_vec(),
        rejected_edges: report.rejected.iter().map(|&i| closures[i].clone()).collect(),
        fused_graph: fused,
        merge_log,
        fused_submaps,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::SceneNode;
    use nalgebra::Vector3;

    #[test]
    fn combine_renumbers_per_layer() {
        let mk = |id: u32, n: u64| {
            let mut g = SceneGraph::new();
            for i in 0..n {
                g.add_node(SceneNode::new(NodeId::object(10 + i), "box", Vector3::zeros()));
            }
            g.add_node(SceneNode::new(NodeId::place(3), "grass", Vector3::zeros()));
            g.set_parent(NodeId::object(10), NodeId::place(3));
            RobotMap { name: format!("r{id}"), robot_id: id, keyframes: vec![], submaps: vec![], graph: g }
        };
        let g = combine_graphs(&[mk(0, 2), mk(1, 1)]);
        let ids: Vec<NodeId> = g.nodes.iter().map(|n| n.id).collect();
        assert_eq!(
            ids,
            vec![NodeId::object(0), NodeId::object(1), NodeId::place(0), NodeId::object(2), NodeId::place(1)]
        );
        assert_eq!(g.parents, vec![(NodeId::object(0), NodeId::place(0)), (NodeId::object(2), NodeId::place(1))]);
        assert_eq!(g.nodes[3].num_attr("robot"), Some(1.0));
        assert!(g.validate().is_empty());
    }

    #[test]
    fn frame_candidate_recovers_offset() {
        // Robot 1's odometry frame sits at F in robot 0's frame. Both see the
        // same spot: robot 0 from C_a, robot 1 from C_b.
        let f = Pose3::from_yaw(0.7, Vector3::new(12.0, -3.0, 0.0));
        let ca = Pose3::from_yaw(0.2, Vector3::new(5.0, 1.0, 0.0));
        let cb = Pose3::from_yaw(-0.4, Vector3::new(-2.0, 4.0, 0.0));
        // x_b = C_b⁻¹ F⁻¹ C_a x_a
        let relative = cb.inverse().compose(&f.inverse()).compose(&ca);
        let a = Submap { robot: 0, index: 0, keyframe: 0, center_pose: ca, objects: vec![] };
        let b = Submap { robot: 1, index: 0, keyframe: 0, center_pose: cb, objects: vec![] };
        let lc = LoopClosure { from_submap: (0, 0), to_submap: (1, 0), relative, num_associations: 4, associations: vec![] };
        let est = frame_candidate(&Pose3::identity(), &a, &b, &lc);
        assert!(crate::geometry::pose_error(&est, &f).translation < 1e-9);
    }
}
