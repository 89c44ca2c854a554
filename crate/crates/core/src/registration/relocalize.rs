use serde::{Deserialize, Serialize};

use super::{register_submaps, ConsistencyParams, LoopClosure};
use crate::geometry::{average_poses, pose_error, Pose3, PoseError};
use crate::object_map::Submap;

/// Relocalization succeeds when the estimate is within these bounds of truth.
pub const SUCCESS_TRANSLATION_M: f64 = 5.0;
pub const SUCCESS_ROTATION_DEG: f64 = 10.0;

/// Two candidate transforms agree when they differ by at most this much.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterTolerance {
    pub translation: f64,
    pub rotation_deg: f64,
}

impl Default for ClusterTolerance {
    fn default() -> Self {
        Self { translation: SUCCESS_TRANSLATION_M, rotation_deg: SUCCESS_ROTATION_DEG }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relocalization {
    /// Local (query) frame to map frame.
    pub local_to_map: Pose3,
    pub num_candidates: usize,
    pub cluster_size: usize,
    pub loop_closures: Vec<LoopClosure>,
}

pub fn relocalization_success(estimate: &Pose3, truth: &Pose3) -> (bool, PoseError) {
    let e = pose_error(estimate, truth);
    (e.within(SUCCESS_TRANSLATION_M, SUCCESS_ROTATION_DEG), e)
}

/// Indices of the largest set of candidates that all agree with one member
/// (the member's tolerance neighbourhood). Ties go to the lowest member.
pub fn largest_agreeing_cluster(candidates: &[Pose3], tol: ClusterTolerance) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for c in candidates {
        let members: Vec<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(_, o)| pose_error(c, o).within(tol.translation, tol.rotation_deg))
            .map(|(j, _)| j)
            .collect();
        if members.len() > best.len() {
            best = members;
        }
    }
    best
}

/// Registers every query submap against every map submap, turns each loop
/// closure into a local→map candidate, and averages the largest agreeing
/// cluster.
pub fn relocalize(
    query: &[Submap],
    map: &[Submap],
    p: &ConsistencyParams,
    tol: ClusterTolerance,
) -> Option<Relocalization> {
    let mut closures = Vec::new();
    let mut candidates = Vec::new();
    for q in query {
        for m in map {
            if let Some(lc) = register_submaps(q, m, p) {
                // x_map = C_m · T · C_q⁻¹ · x_local
                candidates.push(m.center_pose.compose(&lc.relative).compose(&q.center_pose.inverse()));
                closures.push(lc);
            }
        }
    }
    if candidates.is_empty() {
        return None;
    }
    let cluster = largest_agreeing_cluster(&candidates, tol);
    if candidates.len() >= 3 && cluster.len() < 2 {
        return None;
    }
    let members: Vec<Pose3> = cluster.iter().map(|&i| candidates[i]).collect();
    Some(Relocalization {
        local_to_map: average_poses(&members)?,
        num_candidates: candidates.len(),
        cluster_size: cluster.len(),
        loop_closures: cluster.iter().map(|&i| closures[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn cluster_by_hand() {
        let truth = Pose3::from_yaw(0.2, Vector3::new(10.0, 5.0, 0.0));
        let near = [
            truth.compose(&Pose3::from_translation(Vector3::new(0.5, 0.0, 0.0))),
            truth.compose(&Pose3::from_yaw(0.02, Vector3::zeros())),
            truth.compose(&Pose3::from_translation(Vector3::new(-0.5, 0.3, 0.0))),
        ];
        let outlier = Pose3::from_yaw(2.0, Vector3::new(-40.0, 3.0, 0.0));
        let all = [near[0], outlier, near[1], near[2]];
        let cluster = largest_agreeing_cluster(&all, ClusterTolerance::default());
        assert_eq!(cluster, vec![0, 2, 3]);
        let avg = average_poses(&near).unwrap();
        let mean_t = near.iter().map(|p| *p.translation()).sum::<Vector3<f64>>() / 3.0;
        assert!((avg.translation() - mean_t).norm() < 1e-12);
    }

    #[test]
    fn success_rule_is_five_meters_ten_degrees() {
        let truth = Pose3::from_yaw(0.4, Vector3::new(3.0, 1.0, 0.0));
        let off = truth.compose(&Pose3::from_yaw(8f64.to_radians(), Vector3::zeros()));
        let off = Pose3::new(*off.rotation(), truth.translation() + Vector3::new(4.0, 0.0, 0.0));
        assert!(relocalization_success(&off, &truth).0);
        let far = Pose3::new(*truth.rotation(), truth.translation() + Vector3::new(5.1, 0.0, 0.0));
        assert!(!relocalization_success(&far, &truth).0);
        let twisted = truth.compose(&Pose3::from_yaw(10.5f64.to_radians(), Vector3::zeros()));
        assert!(!relocalization_success(&twisted, &truth).0);
    }

    #[test]
    fn no_submaps_no_estimate() {
        assert!(relocalize(&[], &[], &ConsistencyParams::default(), ClusterTolerance::default()).is_none());
    }
}
