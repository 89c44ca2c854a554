use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::{WorldObject, WorldSpec};
use crate::error::{Error, Result};
use crate::geometry::Pose3;
use crate::object_map::{normalize_embedding, Keyframe, Observation};

/// Distance between consecutive keyframes, meters.
pub const KEYFRAME_PITCH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdometryModel {
    /// Per-step translation noise in x and y, meters.
    pub sigma_trans: f64,
    /// Per-step yaw noise, degrees.
    pub sigma_rot_deg: f64,
    /// Constant per-step error: yaw in degrees, then forward scale error as
    /// a fraction of the step.
    pub bias_yaw_deg: f64,
    pub bias_scale: f64,
}

impl Default for OdometryModel {
    fn default() -> Self {
        Self { sigma_trans: 0.02, sigma_rot_deg: 0.1, bias_yaw_deg: 0.05, bias_scale: 0.0 }
    }
}

impl OdometryModel {
    pub fn perfect() -> Self {
        Self { sigma_trans: 0.0, sigma_rot_deg: 0.0, bias_yaw_deg: 0.0, bias_scale: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_trans, self.sigma_rot_deg, self.bias_yaw_deg, self.bias_scale];
        if self.sigma_trans < 0.0 || self.sigma_rot_deg < 0.0 || !all.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!("odometry model {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub range: f64,
    /// Centroid perturbation per sighting, meters.
    pub sigma_centroid: f64,
    /// Per-dimension embedding noise before renormalization.
    pub sigma_embedding: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { range: 12.0, sigma_centroid: 0.1, sigma_embedding: 0.028 }
    }
}

impl SensorModel {
    pub fn perfect(range: f64) -> Self {
        Self { range, sigma_centroid: 0.0, sigma_embedding: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunData {
    /// True keyframe poses in the world frame.
    pub ground_truth: Vec<Pose3>,
    /// Keyframes in the robot's odometry frame, which is the identity at the
    /// first keyframe.
    pub keyframes: Vec<Keyframe>,
}

impl RunData {
    pub fn odometry(&self) -> Vec<Pose3> {
        self.keyframes.iter().map(|k| k.pose).collect()
    }

    /// World to odometry frame at keyframe `k`.
    pub fn world_to_odom(&self, k: usize) -> Pose3 {
        self.keyframes[k].pose.compose(&self.ground_truth[k].inverse())
    }
}

/// World poses every `pitch` meters along the polyline, heading along the
/// current segment.
pub fn sample_polyline(waypoints: &[[f64; 2]], pitch: f64) -> Vec<Pose3> {
    let mut out = Vec::new();
    let mut carry = 0.0;
    let mut last_yaw = 0.0;
    for w in waypoints.windows(2) {
        let (a, b) = (Vector3::new(w[0][0], w[0][1], 0.0), Vector3::new(w[1][0], w[1][1], 0.0));
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            continue;
        }
        let yaw = d.y.atan2(d.x);
        last_yaw = yaw;
        let mut s = carry;
        while s < len {
            out.push(Pose3::from_yaw(yaw, a + d * (s / len)));
            s += pitch;
        }
        carry = s - len;
    }
    if let Some(last) = waypoints.last() {
        let end = Vector3::new(last[0], last[1], 0.0);
        if out.last().is_none_or(|p| (p.translation() - end).norm() > 1e-9) {
            out.push(Pose3::from_yaw(last_yaw, end));
        }
    }
    out
}

/// Points on a 3x3x3 lattice over the object's box, symmetric about the
/// center so their mean is exactly the object position.
pub fn object_points(o: &WorldObject) -> Vec<Vector3<f64>> {
    let pose = Pose3::from_yaw(o.yaw, o.position);
    let mut pts = Vec::with_capacity(27);
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                let local = Vector3::new(i as f64 * o.size[0], j as f64 * o.size[1], k as f64 * o.size[2]) / 2.0;
                pts.push(pose.transform_point(&local));
            }
        }
    }
    pts
}

/// Drives the waypoint polyline and returns true and odometry keyframes
/// with the objects seen within range of each true pose.
pub fn simulate_run(
    world: &WorldSpec,
    waypoints: &[[f64; 2]],
    odom: &OdometryModel,
    sensor: &SensorModel,
    seed: u64,
) -> Result<RunData> {
    odom.validate()?;
    if let Some(w) = waypoints.iter().find(|w| !world.inside(w[0], w[1])) {
        return Err(Error::World(format!("waypoint ({}, {}) outside the world", w[0], w[1])));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = sample_polyline(waypoints, KEYFRAME_PITCH);
    let normal = |s: f64| Normal::new(0.0, s).expect("finite sigma");
    let (n_t, n_r) = (normal(odom.sigma_trans), normal(odom.sigma_rot_deg.to_radians()));
    let (n_c, n_e) = (normal(sensor.sigma_centroid), normal(sensor.sigma_embedding));

    let mut poses = Vec::with_capacity(gt.len());
    for k in 0..gt.len() {
        if k == 0 {
            poses.push(Pose3::identity());
            continue;
        }
        let step = gt[k - 1].between(&gt[k]);
        let t = step.translation() * (1.0 + odom.bias_scale) + Vector3::new(n_t.sample(&mut rng), n_t.sample(&mut rng), 0.0);
        let yaw = odom.bias_yaw_deg.to_radians() + n_r.sample(&mut rng);
        let noisy = Pose3::new(*step.rotation(), t).compose(&Pose3::from_yaw(yaw, Vector3::zeros()));
        poses.push(poses[k - 1].compose(&noisy));
    }

    let points: Vec<Vec<Vector3<f64>>> = world.objects.iter().map(object_points).collect();
    let mut keyframes = Vec::with_capacity(gt.len());
    for (k, g) in gt.iter().enumerate() {
        let to_odom = poses[k].compose(&g.inverse());
        let mut observations = Vec::new();
        for (o, pts) in world.objects.iter().zip(&points) {
            if (o.position - g.translation()).norm() > sensor.range {
                continue;
            }
            let shift = Vector3::new(n_c.sample(&mut rng), n_c.sample(&mut rng), n_c.sample(&mut rng));
            let proto = world.prototype(&o.class).ok_or_else(|| Error::World(format!("unknown class {}", o.class)))?;
            let noisy: Vec<f64> = proto.iter().map(|v| v + n_e.sample(&mut rng)).collect();
            observations.push(Observation {
                track_id: o.id,
                points: pts.iter().map(|p| to_odom.transform_point(&(p + shift))).collect(),
                embedding: normalize_embedding(&noisy)?,
                class_label: o.class.clone(),
            });
        }
        keyframes.push(Keyframe { pose: poses[k], observations });
    }
    Ok(RunData { ground_truth: gt, keyframes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::generate_world;

    #[test]
    fn polyline_spacing() {
        let p = sample_polyline(&[[0.0, 0.0], [3.5, 0.0], [3.5, 2.0]], 1.0);
        let xs: Vec<(f64, f64)> = p.iter().map(|q| (q.translation().x, q.translation().y)).collect();
        assert_eq!(xs, vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (3.5, 0.5), (3.5, 1.5), (3.5, 2.0)]);
        for w in p.windows(2).take(5) {
            assert!(((w[1].translation() - w[0].translation()).norm() - 1.0).abs() < 0.3);
        }
    }

    #[test]
    fn zero_noise_matches_truth() {
        let w = generate_world(1, 20, [60.0, 60.0]).unwrap();
        let run = simulate_run(&w, &[[5.0, 5.0], [50.0, 5.0], [50.0, 50.0]], &OdometryModel::perfect(), &SensorModel::perfect(10.0), 3).unwrap();
        let start = run.ground_truth[0];
        for (g, k) in run.ground_truth.iter().zip(&run.keyframes) {
            let expect = start.inverse().compose(g);
            assert!(crate::geometry::pose_error(&expect, &k.pose).translation < 1e-9);
        }
    }

    #[test]
    fn range_is_respected() {
        let mut w = generate_world(1, 0, [60.0, 60.0]).unwrap();
        let mk = |id, x: f64| WorldObject { id, class: "box".into(), position: Vector3::new(x, 10.0, 0.0), size: [0.6; 3], yaw: 0.0 };
        w.objects = vec![mk(0, 10.0 + 15.0), mk(1, 10.0 + 10.0), mk(2, 10.0 - 10.0 - 1e-9)];
        let run = simulate_run(&w, &[[10.0, 10.0], [10.0, 10.5]], &OdometryModel::perfect(), &SensorModel::perfect(10.0), 0).unwrap();
        let seen: Vec<u64> = run.keyframes[0].observations.iter().map(|o| o.track_id).collect();
        assert_eq!(seen, vec![1]);
    }

    #[test]
    fn lattice_centroid_is_exact() {
        let o = WorldObject { id: 0, class: "car".into(), position: Vector3::new(3.0, -2.0, 0.75), size: [4.5, 1.8, 1.5], yaw: 0.7 };
        let pts = object_points(&o);
        let c = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        assert!((c - o.position).norm() < 1e-12);
    }

    #[test]
    fn drift_grows_with_distance() {
        // 500 m square loop; final error averaged over seeds should grow.
        let w = generate_world(2, 0, [140.0, 140.0]).unwrap();
        let loop_wp = [[10.0, 10.0], [135.0, 10.0], [135.0, 135.0], [10.0, 135.0], [10.0, 10.0]];
        let odom = OdometryModel { sigma_trans: 0.05, sigma_rot_deg: 0.0, bias_yaw_deg: 0.0, bias_scale: 0.0 };
        let checkpoints = [50, 150, 300, 499];
        let mut mean = [0.0; 4];
        for seed in 0..10 {
            let run = simulate_run(&w, &loop_wp, &odom, &SensorModel::perfect(0.0), seed).unwrap();
            let start = run.ground_truth[0];
            for (m, &k) in mean.iter_mut().zip(&checkpoints) {
                let truth = start.inverse().compose(&run.ground_truth[k]);
                *m += (run.keyframes[k].pose.translation() - truth.translation()).norm() / 10.0;
            }
        }
        assert!(mean.windows(2).all(|w| w[1] > w[0]), "{mean:?}");
    }

    #[test]
    fn deterministic() {
        let w = generate_world(4, 30, [80.0, 80.0]).unwrap();
        let wp = [[5.0, 5.0], [70.0, 60.0]];
        let a = simulate_run(&w, &wp, &OdometryModel::default(), &SensorModel::default(), 9).unwrap();
        let b = simulate_run(&w, &wp, &OdometryModel::default(), &SensorModel::default(), 9).unwrap();
        assert_eq!(a, b);
    }
}
