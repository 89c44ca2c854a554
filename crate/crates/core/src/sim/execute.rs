use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::world::WorldSpec;
use crate::error::{Error, Result};
use crate::geometry::Pose3;
use crate::places::NavGraph;
use crate::planner::{check_plan, GroundedPlan, Mission, PlanStep};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub cell: usize,
    /// Cell center mapped into the world frame.
    pub position: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub reached_goal: bool,
    pub trace: Vec<TracePoint>,
    pub inspected: Vec<u64>,
    pub violations: Vec<String>,
}

/// Drives the plan's cell paths from the mission start. Map positions are
/// taken to the world through `map_to_world`; every visited center must lie
/// on traversable terrain. The goal is judged as in plan validation.
pub fn execute(plan: &GroundedPlan, world: &WorldSpec, nav: &NavGraph, mission: &Mission, map_to_world: &Pose3) -> Result<ExecutionReport> {
    let mut cells = vec![mission.start];
    let mut inspected = Vec::new();
    for step in &plan.steps {
        match step {
            PlanStep::Move { path, .. } => cells.extend(path.iter().skip(1)),
            PlanStep::Inspect { object, .. } => inspected.push(*object),
        }
    }
    let mut trace = Vec::with_capacity(cells.len());
    let mut violations = check_plan(plan, nav, mission);
    for c in cells {
        let center = nav.center(c).ok_or(Error::UnknownCell(c))?;
        let position = map_to_world.transform_point(center);
        if !world.traversable(position.x, position.y) {
            violations.push(format!("place_{c} maps to untraversable ground at ({:.1}, {:.1})", position.x, position.y));
        }
        trace.push(TracePoint { cell: c, position });
    }
    Ok(ExecutionReport { reached_goal: violations.is_empty(), trace, inspected, violations })
}
