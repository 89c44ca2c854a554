//! Multi-robot object maps, scene-graph fusion, language goal grounding and
//! hierarchical planning over surface places, with a synthetic-world harness.

pub mod error;
pub mod fusion;
pub mod geometry;
pub mod grounding;
pub mod object_map;
pub mod pddl;
pub mod pipeline;
pub mod places;
pub mod planner;
pub mod registration;
pub mod scene_graph;
pub mod sim;

pub use error::{Error, Result};
