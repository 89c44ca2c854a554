//! Moves map-attached scene nodes with the pose corrections of nearby
//! keyframes.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{NodeKey, Pose3};
use crate::scene_graph::{SceneGraph, SceneNode};

pub const DEFAULT_NEIGHBORS: usize = 3;
const WEIGHT_EPS: f64 = 1e-6;

/// Origin robot of a node, from its `robot` attribute.
pub fn origin_robot(node: &SceneNode) -> Option<u32> {
    node.num_attr("robot").filter(|r| *r >= 0.0 && r.fract() == 0.0).map(|r| r as u32)
}

/// Blended correction of point `p` from its `k` nearest old keyframes.
pub fn correct_point(
    p: &Vector3<f64>,
    keys: &[(NodeKey, Pose3, Pose3)],
    k: usize,
) -> Option<Vector3<f64>> {
    if keys.is_empty() {
        return None;
    }
    let mut by_dist: Vec<(f64, usize)> =
        keys.iter().enumerate().map(|(i, (_, old, _))| ((old.translation() - p).norm(), i)).collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    by_dist.truncate(k.max(1));
    let weights: Vec<f64> = by_dist.iter().map(|(d, _)| 1.0 / (d + WEIGHT_EPS)).collect();
    let total: f64 = weights.iter().sum();
    let mut out = Vector3::zeros();
    for ((_, i), w) in by_dist.iter().zip(&weights) {
        let (_, old, new) = &keys[*i];
        out += new.compose(&old.inverse()).transform_point(p) * (w / total);
    }
    Some(out)
}

/// Re-expresses every node position through the corrections
/// `T_new ∘ T_old⁻¹` of its origin robot's `k` nearest old keyframes.
pub fn interpolate_nodes(
    graph: &SceneGraph,
    old: &BTreeMap<NodeKey, Pose3>,
    new: &BTreeMap<NodeKey, Pose3>,
    k: usize,
) -> Result<SceneGraph> {
    let mut per_robot: BTreeMap<u32, Vec<(NodeKey, Pose3, Pose3)>> = BTreeMap::new();
    for (key, o) in old {
        if let Some(n) = new.get(key) {
            per_robot.entry(key.robot).or_default().push((*key, *o, *n));
        }
    }
    let mut out = graph.clone();
    for node in &mut out.nodes {
        let label = node.id.symbol();
        let robot = origin_robot(node).ok_or_else(|| Error::NoKeyframes(label.clone()))?;
        let keys = per_robot.get(&robot).ok_or_else(|| Error::NoKeyframes(label.clone()))?;
        node.position = correct_point(&node.position, keys, k).ok_or(Error::NoKeyframes(label))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::{AttrValue, NodeId};
    use proptest::prelude::*;

    fn keyframes(n: usize) -> BTreeMap<NodeKey, Pose3> {
        (0..n).map(|i| (NodeKey::new(0, i), Pose3::from_yaw(0.05 * i as f64, Vector3::new(i as f64, 0.0, 0.0)))).collect()
    }

    fn graph(points: &[Vector3<f64>]) -> SceneGraph {
        let mut g = SceneGraph::new();
        for (i, p) in points.iter().enumerate() {
            g.add_node(SceneNode::new(NodeId::object(i as u64), "box", *p).with_attr("robot", AttrValue::Num(0.0)));
        }
        g
    }

    #[test]
    fn identity_correction_leaves_graph() {
        let kf = keyframes(10);
        let g = graph(&[Vector3::new(2.3, 1.0, 0.0), Vector3::new(7.9, -3.0, 0.5)]);
        let out = interpolate_nodes(&g, &kf, &kf, 3).unwrap();
        for (a, b) in g.nodes.iter().zip(&out.nodes) {
            assert!((a.position - b.position).norm() < 1e-9);
        }
    }

    #[test]
    fn rigid_shift_moves_nodes() {
        let kf = keyframes(10);
        let shift = Pose3::from_translation(Vector3::new(5.0, 0.0, 0.0));
        let moved = kf.iter().map(|(k, p)| (*k, shift.compose(p))).collect();
        let g = graph(&[Vector3::new(2.3, 1.0, 0.0), Vector3::new(7.9, -3.0, 0.5)]);
        let out = interpolate_nodes(&g, &kf, &moved, 3).unwrap();
        for (a, b) in g.nodes.iter().zip(&out.nodes) {
            assert!((b.position - a.position - Vector3::new(5.0, 0.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn symmetric_corrections_cancel() {
        let old: BTreeMap<_, _> = [
            (NodeKey::new(0, 0), Pose3::from_translation(Vector3::new(-1.0, 0.0, 0.0))),
            (NodeKey::new(0, 1), Pose3::from_translation(Vector3::new(1.0, 0.0, 0.0))),
        ]
        .into();
        let new: BTreeMap<_, _> = [
            (NodeKey::new(0, 0), Pose3::from_translation(Vector3::new(-0.5, 0.0, 0.0))),
            (NodeKey::new(0, 1), Pose3::from_translation(Vector3::new(0.5, 0.0, 0.0))),
        ]
        .into();
        let g = graph(&[Vector3::new(0.0, 2.0, 0.0)]);
        let out = interpolate_nodes(&g, &old, &new, 2).unwrap();
        assert!((out.nodes[0].position - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn node_without_origin_keyframes_is_an_error() {
        let kf = keyframes(3);
        let mut g = graph(&[Vector3::zeros()]);
        g.nodes[0].attrs.insert("robot".into(), AttrValue::Num(4.0));
        assert!(matches!(interpolate_nodes(&g, &kf, &kf, 3), Err(Error::NoKeyframes(s)) if s == "object_0"));
        g.nodes[0].attrs.clear();
        assert!(interpolate_nodes(&g, &kf, &kf, 3).is_err());
    }

    proptest! {
        #[test]
        fn small_perturbation_small_motion(eps in 1e-6f64..1e-3, px in -5.0f64..15.0, py in -5.0f64..5.0) {
            let kf = keyframes(10);
            let bump = Pose3::from_scaled_axis(Vector3::new(0.0, 0.0, eps), Vector3::new(eps, -eps, eps));
            let moved = kf.iter().map(|(k, p)| (*k, p.compose(&bump))).collect();
            let g = graph(&[Vector3::new(px, py, 0.0)]);
            let out = interpolate_nodes(&g, &kf, &moved, 3).unwrap();
            let d = (out.nodes[0].position - g.nodes[0].position).norm();
            // Lever arm to the farthest neighbour bounds the rotational part.
            prop_assert!(d < eps * (3.0 + 30.0));
        }
    }
}
