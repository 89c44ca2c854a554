//! Open-set object models and trajectory segmentation into submaps.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose3;

/// Default distance traveled before a new submap is opened, meters.
pub const DEFAULT_SUBMAP_SPACING: f64 = 10.0;

/// PCA shape summary of an object point cloud, each term in [0, 1].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeDescriptor {
    pub linearity: f64,
    pub planarity: f64,
    pub sphericity: f64,
}

impl ShapeDescriptor {
    /// From covariance eigenvalues sorted descending.
    pub fn from_eigenvalues(l1: f64, l2: f64, l3: f64) -> Self {
        if l1 <= 0.0 {
            return Self::default();
        }
        Self { linearity: (l1 - l2) / l1, planarity: (l2 - l3) / l1, sphericity: l3 / l1 }
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        (self.linearity - other.linearity).abs()
            + (self.planarity - other.planarity).abs()
            + (self.sphericity - other.sphericity).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub id: u64,
    /// Submap frame, meters.
    pub centroid: Vector3<f64>,
    /// PCA half-lengths, descending.
    pub extents: [f64; 3],
    pub shape: ShapeDescriptor,
    /// Unit-norm semantic embedding.
    pub embedding: Vec<f64>,
    /// Ground-truth bookkeeping only; registration never reads it.
    #[serde(rename = "class")]
    pub class_label: String,
}

impl ObjectModel {
    pub fn cosine(&self, other: &ObjectModel) -> f64 {
        self.embedding.iter().zip(&other.embedding).map(|(a, b)| a * b).sum()
    }

    /// Same object re-expressed through `transform`.
    pub fn transformed(&self, transform: &Pose3) -> ObjectModel {
        ObjectModel { centroid: transform.transform_point(&self.centroid), ..self.clone() }
    }
}

pub fn normalize_embedding(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroEmbedding);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Object model from a point cloud: mean centroid, square roots of the
/// covariance eigenvalues as extents, eigenvalue shape descriptor and the
/// normalized embedding.
pub fn build_object(
    id: u64,
    points: &[Vector3<f64>],
    embedding: &[f64],
    class_label: &str,
) -> Result<ObjectModel> {
    if points.is_empty() {
        return Err(Error::EmptyObject);
    }
    let embedding = normalize_embedding(embedding)?;
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|l| l.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ObjectModel {
        id,
        centroid,
        extents: [ev[0].sqrt(), ev[1].sqrt(), ev[2].sqrt()],
        shape: ShapeDescriptor::from_eigenvalues(ev[0], ev[1], ev[2]),
        embedding,
        class_label: class_label.to_string(),
    })
}

/// One sighting of a tracked object from a keyframe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub track_id: u64,
    /// Object points in the robot's odometry frame.
    pub points: Vec<Vector3<f64>>,
    pub embedding: Vec<f64>,
    #[serde(rename = "class")]
    pub class_label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// Pose in the robot's odometry frame.
    pub pose: Pose3,
    pub observations: Vec<Observation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submap {
    #[serde(skip)]
    pub robot: u32,
    pub index: usize,
    /// Keyframe that opened the submap; its pose is the submap center.
    pub keyframe: usize,
    #[serde(rename = "center")]
    pub center_pose: Pose3,
    pub objects: Vec<ObjectModel>,
}

impl Submap {
    pub fn id(&self) -> (u32, usize) {
        (self.robot, self.index)
    }

    /// Object centroids in the frame the center pose is expressed in.
    pub fn world_objects(&self) -> Vec<ObjectModel> {
        self.objects.iter().map(|o| o.transformed(&self.center_pose)).collect()
    }
}

/// Splits a time-ordered keyframe sequence into submaps. A new submap opens
/// at the first keyframe farther than `spacing` from the current center.
/// Repeated observations of a track inside one submap are merged.
pub fn segment_trajectory(robot: u32, keyframes: &[Keyframe], spacing: f64) -> Result<Vec<Submap>> {
    let mut out: Vec<Submap> = Vec::new();
    let mut pending: Vec<Vec<ObjectModel>> = Vec::new();
    for (k, kf) in keyframes.iter().enumerate() {
        let open_new = match out.last() {
            None => true,
            Some(s) => (kf.pose.translation() - s.center_pose.translation()).norm() > spacing,
        };
        if open_new {
            out.push(Submap { robot, index: out.len(), keyframe: k, center_pose: kf.pose, objects: Vec::new() });
            pending.push(Vec::new());
        }
        let to_submap = out.last().expect("submap opened").center_pose.inverse();
        let bucket = pending.last_mut().expect("bucket opened");
        for obs in &kf.observations {
            let local: Vec<_> = obs.points.iter().map(|p| to_submap.transform_point(p)).collect();
            bucket.push(build_object(obs.track_id, &local, &obs.embedding, &obs.class_label)?);
        }
    }
    for (submap, sightings) in out.iter_mut().zip(pending) {
        submap.objects = merge_sightings(sightings)?;
    }
    Ok(out)
}

fn merge_sightings(mut sightings: Vec<ObjectModel>) -> Result<Vec<ObjectModel>> {
    sightings.sort_by_key(|o| o.id);
    let mut merged = Vec::new();
    for group in sightings.chunk_by(|a, b| a.id == b.id) {
        let n = group.len() as f64;
        let centroid = group.iter().map(|o| o.centroid).sum::<Vector3<f64>>() / n;
        let mut extents = [0.0; 3];
        let mut shape = ShapeDescriptor::default();
        let mut emb = vec![0.0; group[0].embedding.len()];
        for o in group {
            for (e, v) in extents.iter_mut().zip(o.extents) {
                *e += v / n;
            }
            shape.linearity += o.shape.linearity / n;
            shape.planarity += o.shape.planarity / n;
            shape.sphericity += o.shape.sphericity / n;
            for (e, v) in emb.iter_mut().zip(&o.embedding) {
                *e += v;
            }
        }
        merged.push(ObjectModel {
            id: group[0].id,
            centroid,
            extents,
            shape,
            embedding: normalize_embedding(&emb)?,
            class_label: group[0].class_label.clone(),
        });
    }
    Ok(merged)
}

/// On-disk object map of one robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMap {
    pub robot: String,
    pub robot_id: u32,
    pub submaps: Vec<Submap>,
}

impl ObjectMap {
    pub fn new(robot: &str, robot_id: u32, submaps: Vec<Submap>) -> Self {
        Self { robot: robot.to_string(), robot_id, submaps }
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let mut map: ObjectMap = serde_json::from_str(s)?;
        for sm in &mut map.submaps {
            sm.robot = map.robot_id;
        }
        Ok(map)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("object map serializes")
    }
}
