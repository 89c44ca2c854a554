//! Rigid transforms and relative-pose measurements.
//!
//! Rotations are unit quaternions in (w, x, y, z) order composed with the
//! Hamilton product. Translations are in meters.

use std::fmt;

use nalgebra::{Matrix3, Matrix6, Point3, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Maximum deviation of a stored quaternion norm from one.
pub const QUATERNION_NORM_TOL: f64 = 1e-9;

/// A rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose from a quaternion given as (w, x, y, z) and a translation.
    ///
    /// Fails if any component is non-finite or the quaternion norm is not
    /// within [`QUATERNION_NORM_TOL`] of one.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        if q.iter().chain(t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite component".into()));
        }
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(Error::InvalidPose(format!("quaternion norm {norm} is not unit")));
        }
        Ok(Self { rotation: UnitQuaternion::new_unchecked(quat), translation: Vector3::from(t) })
    }

    /// Builds a pose from any rotation; the quaternion is renormalized.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        let rotation = UnitQuaternion::new_normalize(rotation.into_inner());
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: t }
    }

    /// Planar pose: yaw about +z (radians) and a translation.
    pub fn from_yaw(yaw: f64, t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw), t)
    }

    /// Rotation given as an axis-angle vector (radians) and a translation.
    pub fn from_scaled_axis(axis_angle: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(axis_angle), t)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Quaternion as (w, x, y, z).
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3::new(
            self.rotation * other.rotation,
            self.translation + self.rotation * other.translation,
        )
    }

    pub fn inverse(&self) -> Pose3 {
        let inv = self.rotation.inverse();
        Pose3::new(inv, -(inv * self.translation))
    }

    /// `self⁻¹ ∘ other`, the pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose3) -> Pose3 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_point3(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.transform_point(&p.coords))
    }

    /// Rotation angle of this transform in radians, in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Right-perturbation: `self ∘ Exp(delta)` where `delta = [ω; v]` holds a
    /// rotation vector followed by a translation increment (body frame).
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose3 {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        self.compose(&Pose3::from_scaled_axis(w, v))
    }

    /// Tangent coordinates `[ω; t]` of this pose: rotation vector and
    /// translation. Inverse of the small-step parametrization used by
    /// [`Pose3::retract`] about the identity.
    pub fn local_coordinates(&self) -> Vector6<f64> {
        let w = self.rotation.scaled_axis();
        Vector6::new(w.x, w.y, w.z, self.translation.x, self.translation.y, self.translation.z)
    }

    pub fn is_finite(&self) -> bool {
        self.wxyz().iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

impl std::ops::Mul for Pose3 {
    type Output = Pose3;

    fn mul(self, rhs: Pose3) -> Pose3 {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&Pose3> for &Pose3 {
    type Output = Pose3;

    fn mul(self, rhs: &Pose3) -> Pose3 {
        self.compose(rhs)
    }
}

impl fmt::Display for Pose3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.translation;
        let (roll, pitch, yaw) = self.rotation.euler_angles();
        write!(
            f,
            "t=({:.3}, {:.3}, {:.3}) rpy=({:.2}°, {:.2}°, {:.2}°)",
            t.x,
            t.y,
            t.z,
            roll.to_degrees(),
            pitch.to_degrees(),
            yaw.to_degrees()
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for Pose3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let t = self.translation;
        PoseRepr { q: self.wxyz(), t: [t.x, t.y, t.z] }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        Pose3::from_wxyz(repr.q, repr.t).map_err(serde::de::Error::custom)
    }
}

/// Translation and rotation discrepancy between two poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Meters.
    pub translation: f64,
    /// Degrees.
    pub rotation_deg: f64,
}

impl PoseError {
    pub fn within(&self, max_translation: f64, max_rotation_deg: f64) -> bool {
        self.translation <= max_translation && self.rotation_deg <= max_rotation_deg
    }
}

/// Euclidean translation distance and geodesic angle of `R_a⁻¹ R_b`.
pub fn pose_error(a: &Pose3, b: &Pose3) -> PoseError {
    let translation = (a.translation - b.translation).norm();
    let rel = a.rotation.inverse() * b.rotation;
    PoseError { translation, rotation_deg: rel.angle().to_degrees() }
}

/// Identifies a pose-graph node: one keyframe of one robot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeKey {
    pub robot: u32,
    pub index: usize,
}

impl NodeKey {
    pub fn new(robot: u32, index: usize) -> Self {
        Self { robot, index }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}:{}", self.robot, self.index)
    }
}

/// A relative-pose constraint `T_from⁻¹ T_to ≈ relative`.
///
/// `info` is ordered rotation block first (rad⁻²), then translation (m⁻²).
#[derive(Clone, Debug, PartialEq)]
pub struct BetweenMeasurement {
    pub from: NodeKey,
    pub to: NodeKey,
    pub relative: Pose3,
    info: Matrix6<f64>,
}

impl BetweenMeasurement {
    pub fn new(from: NodeKey, to: NodeKey, relative: Pose3, info: Matrix6<f64>) -> Result<Self> {
        validate_information(&info)?;
        Ok(Self { from, to, relative, info })
    }

    /// Diagonal information from standard deviations.
    pub fn with_sigmas(
        from: NodeKey,
        to: NodeKey,
        relative: Pose3,
        sigma_rot_rad: f64,
        sigma_trans_m: f64,
    ) -> Result<Self> {
        Self::new(from, to, relative, diagonal_information(sigma_rot_rad, sigma_trans_m))
    }

    pub fn info(&self) -> &Matrix6<f64> {
        &self.info
    }

    /// Residual `[ω; t]` of `relative⁻¹ (T_from⁻¹ T_to)`.
    pub fn residual(&self, from: &Pose3, to: &Pose3) -> Vector6<f64> {
        self.relative.inverse().compose(&from.between(to)).local_coordinates()
    }

    /// Mahalanobis squared norm of the residual.
    pub fn chi2(&self, from: &Pose3, to: &Pose3) -> f64 {
        let r = self.residual(from, to);
        (r.transpose() * self.info * r)[(0, 0)]
    }
}

pub fn diagonal_information(sigma_rot_rad: f64, sigma_trans_m: f64) -> Matrix6<f64> {
    let wr = 1.0 / (sigma_rot_rad * sigma_rot_rad);
    let wt = 1.0 / (sigma_trans_m * sigma_trans_m);
    Matrix6::from_diagonal(&Vector6::new(wr, wr, wr, wt, wt, wt))
}

fn validate_information(info: &Matrix6<f64>) -> Result<()> {
    if info.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMeasurement("non-finite information".into()));
    }
    let asym = (info - info.transpose()).abs().max();
    if asym > 1e-9 {
        return Err(Error::InvalidMeasurement(format!("information not symmetric (|A-Aᵀ|={asym:e})")));
    }
    let eig = info.symmetric_eigenvalues();
    if eig.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidMeasurement("information not positive definite".into()));
    }
    Ok(())
}

/// Least-squares rigid transform `T` minimizing `Σ‖T·src_i − dst_i‖²`
/// (Kabsch with reflection correction, no scale).
///
/// Returns `None` when fewer than three points are given or the source
/// points are collinear.
pub fn fit_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose3> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        cross += (d - cd) * a.transpose();
        spread += a * a.transpose();
    }
    let eig = spread.symmetric_eigenvalues();
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 1e-12 || ev[1] <= 1e-9 * ev[0].max(1.0) {
        return None;
    }
    let svd = cross.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let d = (u * v_t).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * correction * v_t;
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    Some(Pose3::new(rot, t))
}

/// Average of rigid transforms: arithmetic-mean translation and chordal
/// (sign-aligned, renormalized) quaternion mean.
pub fn average_poses(poses: &[Pose3]) -> Option<Pose3> {
    let first = poses.first()?;
    let q0 = first.rotation.quaternion().coords;
    let mut qsum = nalgebra::Vector4::zeros();
    let mut tsum = Vector3::zeros();
    for p in poses {
        let q = p.rotation.quaternion().coords;
        qsum += if q.dot(&q0) < 0.0 { -q } else { q };
        tsum += p.translation;
    }
    let q = Quaternion::from(qsum);
    if q.norm() < 1e-12 {
        return None;
    }
    Some(Pose3::new(UnitQuaternion::new_normalize(q), tsum / poses.len() as f64))
}
