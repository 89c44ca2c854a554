//! Stage logic for the end-to-end run: simulated robots map a shared world,
//! maps are fused, an instruction is grounded into per-robot goals, and each
//! goal is planned over the fused places and executed against the world.
//!
//! Every stage is a pure function of its inputs and the config, so the same
//! seed and inputs give identical artifacts.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{detect_loop_closures, fuse, metrics, FusionMetrics, FusionResult, FusionSidecar, LabeledPoint, MetricsParams, RobotMap};
use crate::geometry::{NodeKey, Pose3};
use crate::grounding::{ground, GroundingError, LlmClient, PromptBundle};
use crate::object_map::Submap;
use crate::pddl::{goal_equivalent, parse_goal, print_goal, GoalExpr};
use crate::places::NavGraph;
use crate::planner::{plan, validate_plan, GroundedPlan, Mission, PlanOutcome};
use crate::registration::{relocalization_success, relocalize};
use crate::scene_graph::{Layer, SceneGraph};
use crate::sim::{build_robot_map, execute, sample_polyline, simulate_run, ExecutionReport, WorldSpec, KEYFRAME_PITCH, TERRAIN_LABELS};

pub use config::{ClientMode, ConfigError, PipelineConfig};

/// Robot id given to the relocalization query map.
pub const QUERY_ROBOT_ID: u32 = 9;

const STREAM_ROBOT: u64 = 1;
const STREAM_QUERY: u64 = 100;
const STREAM_MISSION: u64 = 200;

/// Independent seed for one random stream, derived from the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotRoute {
    pub name: String,
    pub robot_id: u32,
    pub waypoints: Vec<[f64; 2]>,
}

/// Spot drives east along the main road then north; husky drives north
/// along the cross road then back west beside spot's leg, so the two runs
/// overlap on the east-west road.
pub fn robot_routes(world: &WorldSpec) -> Result<Vec<RobotRoute>> {
    let roads = world.roads().ok_or_else(|| Error::World("world has no roads to drive".into()))?;
    let (rx, ry) = (roads.road_x, roads.road_y);
    let ey = world.extent[1];
    Ok(vec![
        RobotRoute { name: "spot".into(), robot_id: 0, waypoints: vec![[5.0, ry], [rx, ry], [rx, ey - 5.0]] },
        RobotRoute { name: "husky".into(), robot_id: 1, waypoints: vec![[rx, 5.0], [rx, ry], [5.0, ry + 1.5]] },
    ])
}

/// True trajectory of one robot, kept for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub robot_id: u32,
    pub ground_truth: Vec<Pose3>,
}

/// Simulates and maps every robot, concurrently.
pub fn map_robots(cfg: &PipelineConfig, world: &WorldSpec) -> Result<(Vec<RunRecord>, Vec<RobotMap>)> {
    let routes = robot_routes(world)?;
    let out: Vec<Result<(RunRecord, RobotMap)>> = routes
        .par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, STREAM_ROBOT + r.robot_id as u64);
            let run = simulate_run(world, &r.waypoints, &cfg.odometry, &cfg.sensor, seed)?;
            let map = build_robot_map(world, &run, &r.name, r.robot_id, &cfg.mapping)?;
            log::info!("{}: {} keyframes, {} submaps, {} nodes", r.name, run.keyframes.len(), map.submaps.len(), map.graph.nodes.len());
            Ok((RunRecord { name: r.name.clone(), robot_id: r.robot_id, ground_truth: run.ground_truth }, map))
        })
        .collect();
    let mut runs = Vec::new();
    let mut maps = Vec::new();
    for r in out {
        let (run, map) = r?;
        runs.push(run);
        maps.push(map);
    }
    Ok((runs, maps))
}

pub fn fuse_maps(cfg: &PipelineConfig, maps: &[RobotMap]) -> Result<FusionResult> {
    let closures = detect_loop_closures(maps, &cfg.fusion.registration);
    log::info!("{} loop closures", closures.len());
    fuse(maps, &closures, &cfg.fusion)
}

/// Submaps re-anchored at the optimized poses recorded in a fusion sidecar.
pub fn fused_submaps(maps: &[RobotMap], sidecar: &FusionSidecar) -> Result<Vec<Submap>> {
    let poses: BTreeMap<NodeKey, Pose3> = sidecar.poses.iter().copied().collect();
    maps.iter()
        .flat_map(|r| &r.submaps)
        .map(|s| {
            let key = NodeKey::new(s.robot, s.keyframe);
            let p = poses.get(&key).ok_or_else(|| Error::InvalidParameter(format!("fusion sidecar lacks pose {key:?}")))?;
            Ok(Submap { center_pose: *p, ..s.clone() })
        })
        .collect()
}

/// The fused frame is the odometry frame of the lowest robot id; this is its
/// pose in the world.
pub fn fused_frame_in_world(runs: &[RunRecord]) -> Result<Pose3> {
    runs.iter()
        .min_by_key(|r| r.robot_id)
        .and_then(|r| r.ground_truth.first().copied())
        .ok_or_else(|| Error::InvalidParameter("no runs recorded".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelocalizationReport {
    pub estimate: Option<Pose3>,
    pub truth: Pose3,
    pub translation_error: Option<f64>,
    pub rotation_error_deg: Option<f64>,
    pub success: bool,
    pub query_submaps: usize,
    pub num_candidates: usize,
    pub cluster_size: usize,
}

/// Polyline prefix of the route from `start` meters to `start + length`.
fn route_slice(waypoints: &[[f64; 2]], start: f64, length: f64) -> Vec<[f64; 2]> {
    let poses = sample_polyline(waypoints, KEYFRAME_PITCH / 4.0);
    let step = KEYFRAME_PITCH / 4.0;
    let first = (start / step).round() as usize;
    let last = ((start + length) / step).round() as usize;
    poses
        .iter()
        .skip(first)
        .take(last.saturating_sub(first) + 1)
        .map(|p| [p.translation().x, p.translation().y])
        .collect()
}

/// Re-drives part of the first robot's route with fresh noise and a query
/// frame whose heading is offset, then relocalizes it against the fused map.
pub fn relocalize_query(cfg: &PipelineConfig, world: &WorldSpec, runs: &[RunRecord], map_submaps: &[Submap]) -> Result<RelocalizationReport> {
    let rc = &cfg.relocalization;
    let routes = robot_routes(world)?;
    let reference = &routes[0];
    let wp = route_slice(&reference.waypoints, rc.start_along, rc.query_length);
    if wp.len() < 2 {
        return Err(Error::InvalidParameter(format!("relocalization query of {} m from {} m is empty", rc.query_length, rc.start_along)));
    }
    let run = simulate_run(world, &wp, &cfg.odometry, &cfg.sensor, derive_seed(cfg.seed, STREAM_QUERY))?;
    let query = build_robot_map(world, &run, "query", QUERY_ROBOT_ID, &cfg.mapping)?;
    let offset = Pose3::from_yaw(rc.heading_offset_deg.to_radians(), Vector3::zeros());
    let submaps: Vec<Submap> = query.submaps.iter().map(|s| Submap { center_pose: offset.compose(&s.center_pose), ..s.clone() }).collect();

    // x_map = F⁻¹ · G_q · O⁻¹ · x_query, F the fused frame in the world.
    let truth = fused_frame_in_world(runs)?.inverse().compose(&run.ground_truth[0]).compose(&offset.inverse());
    let est = relocalize(&submaps, map_submaps, &cfg.fusion.registration, rc.tolerance);
    let mut report = RelocalizationReport {
        estimate: None,
        truth,
        translation_error: None,
        rotation_error_deg: None,
        success: false,
        query_submaps: submaps.len(),
        num_candidates: 0,
        cluster_size: 0,
    };
    if let Some(r) = est {
        let (ok, e) = relocalization_success(&r.local_to_map, &truth);
        report.estimate = Some(r.local_to_map);
        report.translation_error = Some(e.translation);
        report.rotation_error_deg = Some(e.rotation_deg);
        report.success = ok;
        report.num_candidates = r.num_candidates;
        report.cluster_size = r.cluster_size;
    }
    Ok(report)
}

/// Place labels a ground robot can drive on.
pub fn traversable_labels(world: &WorldSpec) -> BTreeSet<String> {
    TERRAIN_LABELS.iter().map(|s| s.to_string()).filter(|l| !world.untraversable.contains(l)).collect()
}

/// Nav cell nearest each robot's final optimized pose.
pub fn robot_starts(maps: &[RobotMap], sidecar: &FusionSidecar, nav: &NavGraph) -> Result<BTreeMap<String, usize>> {
    let poses: BTreeMap<NodeKey, Pose3> = sidecar.poses.iter().copied().collect();
    let mut out = BTreeMap::new();
    for m in maps {
        let last = m.keyframes.len().checked_sub(1).ok_or_else(|| Error::InvalidParameter(format!("{} has no keyframes", m.name)))?;
        let pose = poses
            .get(&NodeKey::new(m.robot_id, last))
            .ok_or_else(|| Error::InvalidParameter(format!("fusion sidecar lacks the last pose of {}", m.name)))?;
        let cell = nav.nearest(pose.translation()).ok_or_else(|| Error::InvalidParameter("no traversable places".into()))?;
        out.insert(m.name.clone(), cell);
    }
    Ok(out)
}

/// An instruction with its start cells and expected goals, printed as PDDL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSpec {
    pub instruction: String,
    pub starts: BTreeMap<String, usize>,
    pub goals: BTreeMap<String, String>,
}

impl MissionSpec {
    pub fn parsed_goals(&self) -> Result<BTreeMap<String, GoalExpr>> {
        self.goals.iter().map(|(r, g)| Ok((r.clone(), parse_goal(g)?))).collect()
    }

    /// Reply a correct grounding would give, for the scripted client.
    pub fn scripted_reply(&self) -> String {
        self.goals.iter().map(|(r, g)| format!("ROBOT {r}: GOAL {g}")).collect::<Vec<_>>().join("\n")
    }
}

/// Generates a feasible two-robot mission over the fused graph: spot
/// inspects two objects it can reach, husky visits a place while avoiding a
/// place on its direct route.
pub fn make_mission(cfg: &PipelineConfig, graph: &SceneGraph, nav: &NavGraph, starts: &BTreeMap<String, usize>) -> Result<MissionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_MISSION));
    let range = cfg.planner.inspect_range;
    let start_of = |name: &str| starts.get(name).copied().ok_or_else(|| Error::InvalidParameter(format!("no start for {name}")));
    let mut goals = BTreeMap::new();
    let mut text = Vec::new();

    let spot = start_of("spot")?;
    let reach = nav.reachable(spot, &BTreeSet::new());
    let mut objects: Vec<(u64, String)> = graph
        .layer_nodes(Layer::Object)
        .filter(|o| reach.iter().any(|&c| nav.center(c).is_some_and(|p| (p - o.position).norm() <= range)))
        .map(|o| (o.id.index(), o.class_label.clone()))
        .collect();
    if objects.len() < 2 {
        return Err(Error::InvalidParameter("fewer than two objects are inspectable".into()));
    }
    objects.shuffle(&mut rng);
    let mut pick = [objects[0].clone(), objects[1].clone()];
    pick.sort();
    goals.insert("spot".to_string(), format!("(and (inspected object_{}) (inspected object_{}))", pick[0].0, pick[1].0));
    text.push(format!("Spot, inspect the {} object_{} and the {} object_{}.", pick[0].1, pick[0].0, pick[1].1, pick[1].0));

    let husky = start_of("husky")?;
    let reach = nav.reachable(husky, &BTreeSet::new());
    let far: Vec<usize> = reach
        .iter()
        .copied()
        .filter(|&c| (nav.center(c).expect("reachable") - nav.center(husky).expect("start")).norm() > 15.0)
        .collect();
    let mut choice = None;
    let mut targets = far.clone();
    targets.shuffle(&mut rng);
    'outer: for &t in &targets {
        let Some(direct) = crate::planner::path_stream(nav, husky, t, &BTreeSet::new())? else { continue };
        let mut inner: Vec<usize> = direct.0.iter().copied().filter(|&c| c != husky && c != t).collect();
        inner.shuffle(&mut rng);
        for a in inner {
            if nav.reachable(husky, &BTreeSet::from([a])).contains(&t) {
                choice = Some((t, a));
                break 'outer;
            }
        }
    }
    let (t, a) = choice.ok_or_else(|| Error::InvalidParameter("no place for husky to visit around a detour".into()))?;
    goals.insert("husky".to_string(), format!("(and (visited place_{t}) (not (visited place_{a})))"));
    text.push(format!("Husky, go to place_{t} without passing through place_{a}."));

    Ok(MissionSpec { instruction: text.join(" "), starts: starts.clone(), goals })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub instruction: String,
    pub raw_text: Option<String>,
    /// Grounded goal per robot, printed.
    pub goals: BTreeMap<String, String>,
    pub correct: BTreeMap<String, bool>,
    pub error: Option<String>,
}

/// Grounds the mission instruction. Unparseable replies are recorded as a
/// failed grounding; transport failures are errors.
pub fn ground_mission(mission: &MissionSpec, bundle: &PromptBundle, client: &dyn LlmClient) -> Result<GroundingReport> {
    let truth = mission.parsed_goals()?;
    let mut report = GroundingReport {
        instruction: mission.instruction.clone(),
        raw_text: None,
        goals: BTreeMap::new(),
        correct: truth.keys().map(|r| (r.clone(), false)).collect(),
        error: None,
    };
    match ground(&mission.instruction, bundle, client) {
        Ok(resp) => {
            report.raw_text = Some(resp.raw_text.clone());
            for (robot, want) in &truth {
                let got = resp.per_robot_goals.get(robot).cloned().unwrap_or_else(GoalExpr::noop);
                report.correct.insert(robot.clone(), goal_equivalent(&got, want)?);
            }
            report.goals = resp.per_robot_goals.iter().map(|(r, g)| (r.clone(), print_goal(g))).collect();
        }
        Err(e @ GroundingError::Parse { .. }) => {
            report.raw_text = e.raw_text().map(str::to_string);
            report.error = Some(e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Found,
    Infeasible,
    BudgetExhausted,
    /// The goal names a symbol the map does not have.
    Unresolved,
    NoGoal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub start: usize,
    pub goal: Option<String>,
    pub status: PlanStatus,
    pub plan: Option<GroundedPlan>,
    pub valid: bool,
    pub error: Option<String>,
}

/// Plans each robot's grounded goal from its start cell.
pub fn plan_robots(
    cfg: &PipelineConfig,
    graph: &SceneGraph,
    nav: &NavGraph,
    mission: &MissionSpec,
    grounding: &GroundingReport,
) -> Result<BTreeMap<String, PlanRecord>> {
    let mut out = BTreeMap::new();
    for (robot, &start) in &mission.starts {
        let mut rec = PlanRecord { start, goal: None, status: PlanStatus::NoGoal, plan: None, valid: false, error: None };
        let Some(text) = grounding.goals.get(robot) else {
            out.insert(robot.clone(), rec);
            continue;
        };
        rec.goal = Some(text.clone());
        let goal = parse_goal(text)?;
        match Mission::resolve(graph, nav, start, &goal, cfg.planner.inspect_range) {
            Err(e) => {
                rec.status = PlanStatus::Unresolved;
                rec.error = Some(e.to_string());
            }
            Ok(m) => match plan(nav, &m, &cfg.planner)? {
                PlanOutcome::Found(p) => {
                    rec.valid = validate_plan(&p, nav, &m);
                    rec.status = PlanStatus::Found;
                    rec.plan = Some(p);
                }
                PlanOutcome::Infeasible => rec.status = PlanStatus::Infeasible,
                PlanOutcome::BudgetExhausted => rec.status = PlanStatus::BudgetExhausted,
            },
        }
        out.insert(robot.clone(), rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub reached_goal: bool,
    pub report: Option<ExecutionReport>,
    pub error: Option<String>,
}

/// Executes each found plan in the world. Success is judged against the
/// mission's expected goal, not the grounded one.
pub fn execute_robots(
    cfg: &PipelineConfig,
    world: &WorldSpec,
    graph: &SceneGraph,
    nav: &NavGraph,
    mission: &MissionSpec,
    plans: &BTreeMap<String, PlanRecord>,
    map_to_world: &Pose3,
) -> Result<BTreeMap<String, ExecutionRecord>> {
    let truth = mission.parsed_goals()?;
    let mut out = BTreeMap::new();
    for (robot, rec) in plans {
        let mut er = ExecutionRecord { reached_goal: false, report: None, error: None };
        if let (Some(p), Some(goal)) = (rec.plan.as_ref(), truth.get(robot)) {
            match Mission::resolve(graph, nav, rec.start, goal, cfg.planner.inspect_range) {
                Ok(m) => {
                    let r = execute(p, world, nav, &m, map_to_world)?;
                    er.reached_goal = r.reached_goal;
                    er.report = Some(r);
                }
                Err(e) => er.error = Some(e.to_string()),
            }
        }
        out.insert(robot.clone(), er);
    }
    Ok(out)
}

/// One row of the per-robot outcome table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotOutcome {
    pub ground: bool,
    pub plan: bool,
    pub execute: bool,
}

pub fn outcomes(
    grounding: &GroundingReport,
    plans: &BTreeMap<String, PlanRecord>,
    execution: &BTreeMap<String, ExecutionRecord>,
) -> BTreeMap<String, RobotOutcome> {
    grounding
        .correct
        .iter()
        .map(|(r, &g)| {
            let plan = plans.get(r).is_some_and(|p| p.status == PlanStatus::Found && p.valid);
            let execute = execution.get(r).is_some_and(|e| e.reached_goal);
            (r.clone(), RobotOutcome { ground: g, plan, execute })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionEvaluation {
    pub fused: FusionMetrics,
    /// Trajectory error of each robot's odometry placed by its initial frame
    /// alignment, without optimization.
    pub odometry_ate_rmse: f64,
    pub loop_closures: usize,
    pub rejected_edges: usize,
}

/// Trajectory and object accuracy of the fused map against the world.
pub fn evaluate_fusion(
    world: &WorldSpec,
    runs: &[RunRecord],
    maps: &[RobotMap],
    sidecar: &FusionSidecar,
    graph: &SceneGraph,
    params: &MetricsParams,
) -> Result<FusionEvaluation> {
    let poses: BTreeMap<NodeKey, Pose3> = sidecar.poses.iter().copied().collect();
    let frames: BTreeMap<u32, Pose3> = sidecar.robot_frames.iter().copied().collect();
    let mut est = Vec::new();
    let mut odo = Vec::new();
    let mut gt = Vec::new();
    for m in maps {
        let run = runs
            .iter()
            .find(|r| r.robot_id == m.robot_id)
            .ok_or_else(|| Error::InvalidParameter(format!("no ground truth for {}", m.name)))?;
        est.push(
            (0..m.keyframes.len())
                .map(|k| poses.get(&NodeKey::new(m.robot_id, k)).copied().ok_or(Error::EmptyTrajectories))
                .collect::<Result<Vec<_>>>()?,
        );
        let f = frames.get(&m.robot_id).copied().unwrap_or_else(Pose3::identity);
        odo.push(m.keyframes.iter().map(|p| f.compose(p)).collect::<Vec<_>>());
        gt.push(run.ground_truth.clone());
    }
    // Ground truth objects: those any robot mapped, by track id.
    let tracks: BTreeSet<u64> = maps
        .iter()
        .flat_map(|m| m.graph.layer_nodes(Layer::Object))
        .filter_map(|n| n.num_attr("track").map(|t| t as u64))
        .collect();
    let gt_objects: Vec<LabeledPoint> = world
        .objects
        .iter()
        .filter(|o| tracks.contains(&o.id))
        .map(|o| LabeledPoint::new(o.class.clone(), o.position))
        .collect();
    let est_objects: Vec<LabeledPoint> = graph.layer_nodes(Layer::Object).map(|n| LabeledPoint::new(n.class_label.clone(), n.position)).collect();
    let fused = metrics(&est, &gt, &est_objects, &gt_objects, params)?;
    let odometry = metrics(&odo, &gt, &est_objects, &gt_objects, params)?;
    Ok(FusionEvaluation {
        fused,
        odometry_ate_rmse: odometry.ate_rmse,
        loop_closures: sidecar.loop_closures.len(),
        rejected_edges: sidecar.rejected_edges.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::MockClient;
    use crate::sim::generate_world;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s: BTreeSet<u64> = (0..50).map(|i| derive_seed(7, i)).collect();
        assert_eq!(s.len(), 50);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn route_slice_length() {
        let wp = route_slice(&[[0.0, 0.0], [100.0, 0.0]], 4.0, 20.0);
        assert_eq!(wp.first().unwrap(), &[4.0, 0.0]);
        assert!((wp.last().unwrap()[0] - 24.0).abs() < 1e-9);
    }

    #[test]
    fn routes_stay_inside_and_on_roads() {
        let w = generate_world(7, 0, [120.0, 120.0]).unwrap();
        for r in robot_routes(&w).unwrap() {
            for p in sample_polyline(&r.waypoints, 1.0) {
                let t = p.translation();
                assert!(w.inside(t.x, t.y));
                assert!(w.traversable(t.x, t.y), "{} at {t:?}", r.name);
            }
        }
    }

    #[test]
    fn end_to_end_small() {
        let cfg = PipelineConfig::default();
        let world = generate_world(cfg.seed, cfg.world.n_objects, cfg.world.extent).unwrap();
        let (runs, maps) = map_robots(&cfg, &world).unwrap();
        let fusion = fuse_maps(&cfg, &maps).unwrap();
        assert!(!fusion.loop_closures.is_empty());
        let sidecar = fusion.sidecar();
        let graph = &fusion.fused_graph;
        let nav = NavGraph::from_scene_graph(graph, &traversable_labels(&world));
        let starts = robot_starts(&maps, &sidecar, &nav).unwrap();
        let mission = make_mission(&cfg, graph, &nav, &starts).unwrap();
        let bundle = PromptBundle::new(graph, cfg.grounding.capabilities.clone()).with_instruction(&mission.instruction);
        let client = MockClient::new([(mission.instruction.clone(), mission.scripted_reply())]);
        let g = ground_mission(&mission, &bundle, &client).unwrap();
        let plans = plan_robots(&cfg, graph, &nav, &mission, &g).unwrap();
        let exec = execute_robots(&cfg, &world, graph, &nav, &mission, &plans, &fused_frame_in_world(&runs).unwrap()).unwrap();
        let rows = outcomes(&g, &plans, &exec);
        for (r, o) in &rows {
            assert!(o.ground && o.plan && o.execute, "{r}: {o:?} {:?} {:?}", plans[r], exec[r].report.as_ref().map(|x| &x.violations));
        }
        let eval = evaluate_fusion(&world, &runs, &maps, &sidecar, graph, &MetricsParams::default()).unwrap();
        assert!(eval.fused.ate_rmse <= eval.odometry_ate_rmse, "{eval:?}");
        let reloc = relocalize_query(&cfg, &world, &runs, &fusion.fused_submaps).unwrap();
        assert!(reloc.success, "{reloc:?}");
    }
}
