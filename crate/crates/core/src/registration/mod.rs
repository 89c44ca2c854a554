//! Object association between submaps, loop closures and relocalization.
//!
//! Associations are found by gating candidate object pairs on semantic,
//! shape and size similarity, then selecting the one-to-one subset with the
//! largest total affinity in which every two associations preserve the
//! distance between their objects.

mod clique;
mod relocalize;

use serde::{Deserialize, Serialize};

pub use clique::{ConsistencyGraph, EXACT_LIMIT};
pub use relocalize::{largest_agreeing_cluster, relocalize, relocalization_success, ClusterTolerance, Relocalization};

use crate::error::{Error, Result};
use crate::geometry::{fit_rigid, Pose3};
use crate::object_map::Submap;

/// Additive floor applied to extents before taking size ratios, meters.
const EXTENT_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyParams {
    /// Pairwise distance-preservation tolerance, meters.
    pub eps_dist: f64,
    pub min_cos_sim: f64,
    /// L1 distance bound on shape descriptors.
    pub max_shape_diff: f64,
    pub min_associations: usize,
    pub max_extent_ratio: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        Self { eps_dist: 0.5, min_cos_sim: 0.7, max_shape_diff: 0.4, min_associations: 4, max_extent_ratio: 2.0 }
    }
}

impl ConsistencyParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_dist > 0.0
            && (-1.0..=1.0).contains(&self.min_cos_sim)
            && self.max_shape_diff >= 0.0
            && self.max_extent_ratio >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidMeasurement(format!("consistency parameters out of range: {self:?}")))
        }
    }
}

/// Candidate association of object `a` (index into the first submap) with
/// object `b` (index into the second).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub a: usize,
    pub b: usize,
    pub affinity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopClosure {
    #[serde(rename = "from")]
    pub from_submap: (u32, usize),
    #[serde(rename = "to")]
    pub to_submap: (u32, usize),
    /// Maps coordinates in the `from` submap frame into the `to` frame.
    #[serde(rename = "pose")]
    pub relative: Pose3,
    #[serde(rename = "n")]
    pub num_associations: usize,
    /// Object id pairs `(from object, to object)`.
    #[serde(default)]
    pub associations: Vec<(u64, u64)>,
}

impl LoopClosure {
    /// Relative pose `T_from⁻¹ T_to` of the two submap centers.
    pub fn between(&self) -> Pose3 {
        self.relative.inverse()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loop closure serializes")
    }
}

fn extent_ratio_ok(a: &[f64; 3], b: &[f64; 3], max_ratio: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| {
        let (x, y) = (x + EXTENT_FLOOR, y + EXTENT_FLOOR);
        x.max(y) / x.min(y) <= max_ratio
    })
}

/// Object pairs passing the semantic, shape and size gates, ordered by
/// `(a, b)`. Affinity is the cosine similarity mapped to (0, 1].
pub fn candidate_pairs(a: &Submap, b: &Submap, p: &ConsistencyParams) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (i, oa) in a.objects.iter().enumerate() {
        for (k, ob) in b.objects.iter().enumerate() {
            let cos = oa.cosine(ob);
            if cos >= p.min_cos_sim
                && oa.shape.l1_distance(&ob.shape) <= p.max_shape_diff
                && extent_ratio_ok(&oa.extents, &ob.extents, p.max_extent_ratio)
            {
                let affinity = ((1.0 + cos.min(1.0)) / 2.0).max(f64::MIN_POSITIVE);
                out.push(Candidate { a: i, b: k, affinity });
            }
        }
    }
    out
}

/// Whether two associations can hold together: distinct objects on both
/// sides and preserved inter-object distance.
pub fn pairwise_consistent(u: &Candidate, v: &Candidate, a: &Submap, b: &Submap, eps: f64) -> bool {
    if u.a == v.a || u.b == v.b {
        return false;
    }
    let da = (a.objects[u.a].centroid - a.objects[v.a].centroid).norm();
    let db = (b.objects[u.b].centroid - b.objects[v.b].centroid).norm();
    (da - db).abs() <= eps
}

pub fn consistency_graph(pairs: &[Candidate], a: &Submap, b: &Submap, p: &ConsistencyParams) -> ConsistencyGraph {
    let mut g = ConsistencyGraph::new(
        pairs.iter().map(|c| c.affinity).collect(),
        pairs.iter().map(|c| (c.a, c.b)).collect(),
    );
    for (i, u) in pairs.iter().enumerate() {
        for (j, v) in pairs.iter().enumerate().skip(i + 1) {
            if pairwise_consistent(u, v, a, b, p.eps_dist) {
                g.add_edge(i, j);
            }
        }
    }
    g
}

/// The mutually consistent one-to-one subset with maximal total affinity.
pub fn max_consistent_set(pairs: &[Candidate], a: &Submap, b: &Submap, p: &ConsistencyParams) -> Vec<Candidate> {
    let g = consistency_graph(pairs, a, b, p);
    g.max_weight_clique().into_iter().map(|i| pairs[i]).collect()
}

/// Rigid transform taking `a`-frame centroids onto their `b` partners.
pub fn estimate_transform(associations: &[Candidate], a: &Submap, b: &Submap) -> Result<Pose3> {
    let src: Vec<_> = associations.iter().map(|c| a.objects[c.a].centroid).collect();
    let dst: Vec<_> = associations.iter().map(|c| b.objects[c.b].centroid).collect();
    fit_rigid(&src, &dst).ok_or(Error::DegenerateAlignment)
}

pub fn register_submaps(a: &Submap, b: &Submap, p: &ConsistencyParams) -> Option<LoopClosure> {
    let pairs = candidate_pairs(a, b, p);
    if pairs.len() < p.min_associations {
        return None;
    }
    let set = max_consistent_set(&pairs, a, b, p);
    if set.len() < p.min_associations {
        return None;
    }
    let relative = estimate_transform(&set, a, b).ok()?;
    Some(LoopClosure {
        from_submap: a.id(),
        to_submap: b.id(),
        relative,
        num_associations: set.len(),
        associations: set.iter().map(|c| (a.objects[c.a].id, b.objects[c.b].id)).collect(),
    })
}
