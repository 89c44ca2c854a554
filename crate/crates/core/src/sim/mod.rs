//! Synthetic worlds, drifting odometry with object sightings, per-robot
//! map building and plan execution against the true world.

mod execute;
mod mapping;
mod run;
mod world;

pub use execute::{execute, ExecutionReport, TracePoint};
pub use mapping::{build_robot_map, MappingParams};
pub use run::{object_points, sample_polyline, simulate_run, OdometryModel, RunData, SensorModel, KEYFRAME_PITCH};
pub use world::{
    generate_world, point_in_polygon, ClassPrototype, Patch, RoadLayout, WorldObject, WorldRegion, WorldSpec, CLASSES,
    EMBEDDING_DIM, MIN_OBJECT_SPACING, TERRAIN_LABELS, WATER,
};
