use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mrsg_core::fusion::{FusionSidecar, MetricsParams, RobotMap};
use mrsg_core::grounding::{
    load_trials, score_trials, LiveClient, LlmClient, MockClient, PromptBundle, RecordingClient, ReplayClient,
};
use mrsg_core::pddl::{domain_text, emit_problem, parse_goal};
use mrsg_core::pipeline::{self as pl, ClientMode, ExecutionRecord, GroundingReport, MissionSpec, PipelineConfig, PlanRecord, RobotOutcome, RunRecord};
use mrsg_core::places::NavGraph;
use mrsg_core::scene_graph::{NodeId, SceneGraph};
use mrsg_core::sim::{generate_world, WorldSpec};

/// Failure of one stage. Usage errors are operator mistakes such as a
/// missing input; domain errors come from the computation itself.
#[derive(Debug)]
pub enum StageError {
    Usage(String),
    Domain(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Usage(_) => 2,
            StageError::Domain(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            StageError::Usage(m) | StageError::Domain(m) => m,
        }
    }
}

type StageResult<T> = Result<T, StageError>;

fn domain(e: impl std::fmt::Display) -> StageError {
    StageError::Domain(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GenWorld,
    Map,
    Fuse,
    Relocalize,
    EvalFusion,
    Ground,
    Plan,
    Execute,
    EvalGrounding,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenWorld => "gen-world",
            Stage::Map => "map",
            Stage::Fuse => "fuse",
            Stage::Relocalize => "relocalize",
            Stage::EvalFusion => "eval-fusion",
            Stage::Ground => "ground",
            Stage::Plan => "plan",
            Stage::Execute => "execute",
            Stage::EvalGrounding => "eval-grounding",
        }
    }
}

/// Stages in pipeline order.
pub const PIPELINE: [Stage; 8] =
    [Stage::GenWorld, Stage::Map, Stage::Fuse, Stage::Relocalize, Stage::EvalFusion, Stage::Ground, Stage::Plan, Stage::Execute];

pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

#[derive(Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub robots: BTreeMap<String, RobotOutcome>,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, over: &Option<PathBuf>, name: &str) -> PathBuf {
        over.clone().unwrap_or_else(|| self.path(name))
    }

    fn read_text(&self, path: &Path) -> StageResult<String> {
        fs::read_to_string(path).map_err(|e| StageError::Usage(format!("reading {}: {e}", path.display())))
    }

    fn read_json<T: DeserializeOwned>(&self, path: &Path) -> StageResult<T> {
        let text = self.read_text(path)?;
        serde_json::from_str(&text).map_err(|e| StageError::Domain(format!("parsing {}: {e}", path.display())))
    }

    fn write(&self, name: &str, text: &str) -> StageResult<()> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| domain(format!("creating {}: {e}", dir.display())))?;
        }
        fs::write(&path, text).map_err(|e| domain(format!("writing {}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> StageResult<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(domain)?;
        s.push('\n');
        self.write(name, &s)
    }

    fn world(&self) -> StageResult<WorldSpec> {
        let path = self.input(&self.cfg.paths.world, "world.json");
        WorldSpec::from_json(&self.read_text(&path)?).map_err(|e| domain(format!("parsing {}: {e}", path.display())))
    }

    fn maps(&self) -> StageResult<Vec<RobotMap>> {
        let dir = self.input(&self.cfg.paths.maps, "maps");
        let entries = fs::read_dir(&dir).map_err(|e| StageError::Usage(format!("reading {}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
        files.sort();
        let mut maps = Vec::new();
        for f in files {
            let m = RobotMap::from_json(&self.read_text(&f)?).map_err(|e| domain(format!("parsing {}: {e}", f.display())))?;
            maps.push(m);
        }
        if maps.is_empty() {
            return Err(StageError::Usage(format!("no robot maps in {}", dir.display())));
        }
        maps.sort_by_key(|m| m.robot_id);
        Ok(maps)
    }

    fn graph(&self) -> StageResult<SceneGraph> {
        let path = self.input(&self.cfg.paths.graph, "fused_graph.json");
        SceneGraph::from_json(&self.read_text(&path)?).map_err(|e| domain(format!("parsing {}: {e}", path.display())))
    }

    fn mission(&self) -> StageResult<MissionSpec> {
        self.read_json(&self.input(&self.cfg.paths.goals, "mission.json"))
    }

    fn nav(&self, world: &WorldSpec, graph: &SceneGraph) -> NavGraph {
        NavGraph::from_scene_graph(graph, &pl::traversable_labels(world))
    }

    /// Runs one stage and returns its summary text.
    pub fn run(&self, stage: Stage) -> StageResult<String> {
        let summary = match stage {
            Stage::GenWorld => self.gen_world(),
            Stage::Map => self.map(),
            Stage::Fuse => self.fuse(),
            Stage::Relocalize => self.relocalize(),
            Stage::EvalFusion => self.eval_fusion(),
            Stage::Ground => self.ground(),
            Stage::Plan => self.plan(),
            Stage::Execute => self.execute(),
            Stage::EvalGrounding => self.eval_grounding(),
        }
        .map_err(|e| match e {
            StageError::Usage(m) => StageError::Usage(format!("{}: {m}", stage.name())),
            StageError::Domain(m) => StageError::Domain(format!("{}: {m}", stage.name())),
        })?;
        self.write(&format!("summaries/{}.txt", stage.name()), &summary)?;
        Ok(summary)
    }

    pub fn pipeline(&self) -> StageResult<String> {
        let mut all = String::new();
        for stage in PIPELINE {
            let s = self.run(stage)?;
            writeln!(all, "[{}]\n{s}", stage.name()).unwrap();
        }
        if self.cfg.paths.trials.is_some() {
            let s = self.run(Stage::EvalGrounding)?;
            writeln!(all, "[{}]\n{s}", Stage::EvalGrounding.name()).unwrap();
        }
        self.write("summary.txt", &all)?;
        Ok(all)
    }

    fn gen_world(&self) -> StageResult<String> {
        let w = &self.cfg.world;
        let world = generate_world(self.cfg.seed, w.n_objects, w.extent).map_err(domain)?;
        self.write("world.json", &world.to_json())?;
        Ok(format!(
            "world {} x {} m, {} objects, {} regions, {} terrain patches\n",
            world.extent[0],
            world.extent[1],
            world.objects.len(),
            world.regions.len(),
            world.patches.len()
        ))
    }

    fn map(&self) -> StageResult<String> {
        let world = self.world()?;
        let (runs, maps) = pl::map_robots(&self.cfg, &world).map_err(domain)?;
        let mut s = String::new();
        for m in &maps {
            self.write(&format!("maps/{}.json", m.name), &m.to_json())?;
            writeln!(s, "{}: {} keyframes, {} submaps, {} scene nodes", m.name, m.keyframes.len(), m.submaps.len(), m.graph.nodes.len()).unwrap();
        }
        self.write_json("runs.json", &runs)?;
        Ok(s)
    }

    fn fuse(&self) -> StageResult<String> {
        let maps = self.maps()?;
        let r = pl::fuse_maps(&self.cfg, &maps).map_err(domain)?;
        self.write("fused_graph.json", &r.fused_graph.to_json())?;
        self.write_json("fusion.json", &r.sidecar())?;
        Ok(format!(
            "{} loop closures, {} rejected, cost {:.3} -> {:.3} in {} iterations, {} merges, {} fused nodes\n",
            r.loop_closures.len(),
            r.rejected_edges.len(),
            r.report.initial_cost,
            r.report.final_cost,
            r.report.iterations,
            r.merge_log.len(),
            r.fused_graph.nodes.len()
        ))
    }

    fn sidecar(&self) -> StageResult<FusionSidecar> {
        self.read_json(&self.path("fusion.json"))
    }

    fn runs(&self) -> StageResult<Vec<RunRecord>> {
        self.read_json(&self.path("runs.json"))
    }

    fn relocalize(&self) -> StageResult<String> {
        let world = self.world()?;
        let runs = self.runs()?;
        let submaps = pl::fused_submaps(&self.maps()?, &self.sidecar()?).map_err(domain)?;
        let r = pl::relocalize_query(&self.cfg, &world, &runs, &submaps).map_err(domain)?;
        self.write_json("relocalization.json", &r)?;
        let t = r.truth;
        let mut s = format!(
            "truth offset {:.2} m, {:.2} deg; {} query submaps, {} candidates, cluster {}\n",
            t.translation().norm(),
            t.rotation_angle().to_degrees(),
            r.query_submaps,
            r.num_candidates,
            r.cluster_size
        );
        match (r.translation_error, r.rotation_error_deg) {
            (Some(te), Some(re)) => writeln!(s, "error {te:.3} m, {re:.3} deg: {}", if r.success { "success" } else { "failure" }).unwrap(),
            _ => s.push_str("no estimate: failure\n"),
        }
        Ok(s)
    }

    fn eval_fusion(&self) -> StageResult<String> {
        let world = self.world()?;
        let e = pl::evaluate_fusion(&world, &self.runs()?, &self.maps()?, &self.sidecar()?, &self.graph()?, &MetricsParams::default())
            .map_err(domain)?;
        self.write_json("fusion_eval.json", &e)?;
        let m = &e.fused;
        Ok(format!(
            "ATE fused {:.3} m, odometry only {:.3} m\nobjects precision {:.3} recall {:.3} IoU {:.3}\n",
            m.ate_rmse, e.odometry_ate_rmse, m.precision, m.recall, m.iou
        ))
    }

    fn replies(&self) -> StageResult<Vec<(String, String)>> {
        #[derive(Deserialize)]
        struct Reply {
            instruction: String,
            response: String,
        }
        let Some(path) = &self.cfg.paths.replies else { return Ok(Vec::new()) };
        let text = self.read_text(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str::<Reply>(l)
                    .map(|r| (r.instruction, r.response))
                    .map_err(|e| domain(format!("{} line {}: {e}", path.display(), i + 1)))
            })
            .collect()
    }

    fn replay_client(&self, default: Option<PathBuf>) -> StageResult<ReplayClient> {
        let path = self
            .cfg
            .paths
            .cassette
            .clone()
            .or(default)
            .ok_or_else(|| StageError::Usage("replay needs paths.cassette".into()))?;
        if !path.exists() {
            return Err(StageError::Usage(format!("cassette {} does not exist", path.display())));
        }
        ReplayClient::load(&path).map_err(domain)
    }

    fn mission_or_generate(&self, graph: &SceneGraph, nav: &NavGraph) -> StageResult<(MissionSpec, bool)> {
        if self.cfg.paths.goals.is_some() {
            return Ok((self.mission()?, false));
        }
        let starts = pl::robot_starts(&self.maps()?, &self.sidecar()?, nav).map_err(domain)?;
        Ok((pl::make_mission(&self.cfg, graph, nav, &starts).map_err(domain)?, true))
    }

    fn ground(&self) -> StageResult<String> {
        let world = self.world()?;
        let graph = self.graph()?;
        let nav = self.nav(&world, &graph);
        let (mission, generated) = self.mission_or_generate(&graph, &nav)?;
        if generated {
            self.write_json("mission.json", &mission)?;
        }
        let bundle = PromptBundle::new(&graph, self.cfg.grounding.capabilities.clone()).with_instruction(&mission.instruction);
        self.write("prompt.txt", &bundle.render())?;
        let report = match self.cfg.client {
            ClientMode::Replay => pl::ground_mission(&mission, &bundle, &self.replay_client(Some(self.path("cassette.jsonl")))?),
            ClientMode::Mock => {
                let mut pairs = self.replies()?;
                pairs.push((mission.instruction.clone(), mission.scripted_reply()));
                self.ground_recorded(&mission, &bundle, MockClient::new(pairs))?
            }
            ClientMode::Live => self.ground_recorded(&mission, &bundle, LiveClient::from_env().map_err(domain)?)?,
        }
        .map_err(domain)?;
        self.write_json("grounding.json", &report)?;
        let mut s = format!("instruction: {}\n", mission.instruction);
        for (robot, ok) in &report.correct {
            let goal = report.goals.get(robot).map(String::as_str).unwrap_or("(none)");
            writeln!(s, "{robot}: {goal} [{}]", if *ok { "correct" } else { "incorrect" }).unwrap();
        }
        if let Some(e) = &report.error {
            writeln!(s, "error: {e}").unwrap();
        }
        Ok(s)
    }

    fn ground_recorded<C: LlmClient>(
        &self,
        mission: &MissionSpec,
        bundle: &PromptBundle,
        client: C,
    ) -> StageResult<mrsg_core::Result<GroundingReport>> {
        let rec = RecordingClient::new(client);
        let r = pl::ground_mission(mission, bundle, &rec);
        rec.save(&self.path("cassette.jsonl")).map_err(domain)?;
        Ok(r)
    }

    fn plan(&self) -> StageResult<String> {
        let world = self.world()?;
        let graph = self.graph()?;
        let nav = self.nav(&world, &graph);
        let mission = self.mission()?;
        let grounding: GroundingReport = self.read_json(&self.path("grounding.json"))?;
        let plans = pl::plan_robots(&self.cfg, &graph, &nav, &mission, &grounding).map_err(domain)?;
        self.write("domain.pddl", &domain_text())?;
        for (robot, rec) in &plans {
            if let Some(g) = &rec.goal {
                let goal = parse_goal(g).map_err(domain)?;
                if let Ok(p) = emit_problem(&graph, NodeId::place(rec.start as u64), &goal) {
                    self.write(&format!("problems/{robot}.pddl"), &p)?;
                }
            }
        }
        self.write_json("plans.json", &plans)?;
        let mut s = String::new();
        for (robot, rec) in &plans {
            match &rec.plan {
                Some(p) => writeln!(s, "{robot}: {} steps, cost {:.2}, valid {}", p.steps.len(), p.total_cost, rec.valid).unwrap(),
                None => writeln!(s, "{robot}: {:?}", rec.status).unwrap(),
            }
        }
        Ok(s)
    }

    fn execute(&self) -> StageResult<String> {
        let world = self.world()?;
        let graph = self.graph()?;
        let nav = self.nav(&world, &graph);
        let mission = self.mission()?;
        let grounding: GroundingReport = self.read_json(&self.path("grounding.json"))?;
        let plans: BTreeMap<String, PlanRecord> = self.read_json(&self.path("plans.json"))?;
        let map_to_world = pl::fused_frame_in_world(&self.runs()?).map_err(domain)?;
        let exec: BTreeMap<String, ExecutionRecord> =
            pl::execute_robots(&self.cfg, &world, &graph, &nav, &mission, &plans, &map_to_world).map_err(domain)?;
        self.write_json("execution.json", &exec)?;
        let robots = pl::outcomes(&grounding, &plans, &exec);
        self.write_json("report.json", &Report { seed: self.cfg.seed, robots: robots.clone() })?;
        let mut s = String::from("robot   ground  plan   execute\n");
        for (r, o) in &robots {
            writeln!(s, "{r:<7} {:<7} {:<6} {}", o.ground, o.plan, o.execute).unwrap();
        }
        Ok(s)
    }

    fn eval_grounding(&self) -> StageResult<String> {
        let trials_path = self.cfg.paths.trials.as_ref().ok_or_else(|| StageError::Usage("paths.trials is not set".into()))?;
        let trials = load_trials(&self.read_text(trials_path)?).map_err(domain)?;
        let graph = self.graph()?;
        let bundle = PromptBundle::new(&graph, self.cfg.grounding.capabilities.clone());
        let client: Box<dyn LlmClient> = match self.cfg.client {
            ClientMode::Replay => Box::new(self.replay_client(None)?),
            ClientMode::Mock => {
                if self.cfg.paths.replies.is_none() {
                    return Err(StageError::Usage("mock grounding evaluation needs paths.replies".into()));
                }
                Box::new(MockClient::new(self.replies()?))
            }
            ClientMode::Live => Box::new(LiveClient::from_env().map_err(domain)?),
        };
        let score = score_trials(&trials, &bundle, client.as_ref()).map_err(domain)?;
        if let Some(err) = score.outcomes.iter().find_map(|o| o.error.as_ref()) {
            log::warn!("first trial error: {err}");
        }
        self.write_json("grounding_eval.json", &score)?;
        Ok(format!("{score}\n"))
    }
}
