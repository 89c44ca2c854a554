//! Natural-language grounding: the scene is described in text, a language
//! model answers with one PDDL goal per robot, and trial sets are scored by
//! logical equivalence with the expected goals.

mod client;
mod trials;

pub use client::{prompt_hash, CassetteEntry, LiveClient, LlmClient, MockClient, RecordingClient, ReplayClient};
pub use trials::{load_trials, score_trials, Category, CategoryScore, GroundingScore, GroundingTrial, TrialOutcome};

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{parse_goal, problem::domain_text, GoalExpr};
use crate::scene_graph::{Layer, SceneGraph};

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("transport error: {message}")]
    Transport { message: String, retriable: bool },
    #[error("unparseable response ({message}): {raw_text:?}")]
    Parse { message: String, raw_text: String },
    #[error("no cassette entry for prompt {0}")]
    MissingFixture(String),
    #[error("cassette {path}: {message}")]
    Cassette { path: String, message: String },
}

impl GroundingError {
    pub fn retriable(&self) -> bool {
        matches!(self, GroundingError::Transport { retriable: true, .. })
    }

    pub fn raw_text(&self) -> Option<&str> {
        match self {
            GroundingError::Parse { raw_text, .. } => Some(raw_text),
            _ => None,
        }
    }
}

fn coord(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

/// Text listing of objects (class, position, region) and regions, sorted by id.
pub fn serialize_scene(graph: &SceneGraph) -> String {
    let mut objects: Vec<_> = graph.layer_nodes(Layer::Object).collect();
    objects.sort_by_key(|n| n.id);
    let mut regions: Vec<_> = graph.layer_nodes(Layer::Region).collect();
    regions.sort_by_key(|n| n.id);
    let mut out = String::from("Objects:\n");
    for n in objects {
        let p = n.position;
        write!(out, "{}: {} at ({}, {}, {})", n.id.symbol(), n.class_label, coord(p.x), coord(p.y), coord(p.z)).unwrap();
        if let Some(r) = graph.region_of(n.id) {
            write!(out, " in {}", r.symbol()).unwrap();
        }
        out.push('\n');
    }
    out.push_str("Regions:\n");
    for n in regions {
        writeln!(out, "{}: {}", n.id.symbol(), n.class_label).unwrap();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_description: String,
    pub domain_description: String,
    pub capability_descriptions: BTreeMap<String, String>,
    pub scene_text: String,
    pub in_context_examples: Vec<(String, String)>,
    pub instruction: String,
}

pub const DEFAULT_TASK: &str = "Translate the operator instruction into one PDDL goal per robot. \
Use only symbols that appear in the scene description. Answer with one line per robot in the form \
ROBOT <name>: GOAL <goal>. A robot with nothing to do may be left out.";

pub fn default_capabilities() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("husky".to_string(), "Wheeled robot. Can move between places and inspect objects.".to_string()),
        ("spot".to_string(), "Legged robot. Can move between places and inspect objects.".to_string()),
    ])
}

pub fn default_examples() -> Vec<(String, String)> {
    vec![
        ("Spot, inspect object 3.".into(), "ROBOT spot: GOAL (inspected object_3)".into()),
        (
            "Husky, go to place 4 but stay out of place 2. Spot, look at objects 1 and 5.".into(),
            "ROBOT husky: GOAL (and (visited place_4) (not (visited place_2)))\nROBOT spot: GOAL (and (inspected object_1) (inspected object_5))".into(),
        ),
        ("One of you be by object 8.".into(), "ROBOT husky: GOAL (or (at object_8) (visited object_8))".into()),
    ]
}

impl PromptBundle {
    pub fn new(graph: &SceneGraph, capabilities: BTreeMap<String, String>) -> Self {
        PromptBundle {
            task_description: DEFAULT_TASK.into(),
            domain_description: domain_text(),
            capability_descriptions: capabilities,
            scene_text: serialize_scene(graph),
            in_context_examples: default_examples(),
            instruction: String::new(),
        }
    }

    pub fn with_instruction(&self, instruction: &str) -> Self {
        PromptBundle { instruction: instruction.to_string(), ..self.clone() }
    }

    /// The prompt text, sections in field order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# Task\n{}\n", self.task_description).unwrap();
        writeln!(out, "# Domain\n{}", self.domain_description).unwrap();
        out.push_str("# Robots\n");
        for (name, cap) in &self.capability_descriptions {
            writeln!(out, "{name}: {cap}").unwrap();
        }
        writeln!(out, "\n# Scene\n{}", self.scene_text).unwrap();
        out.push_str("# Examples\n");
        for (instruction, response) in &self.in_context_examples {
            writeln!(out, "Instruction: {instruction}\n{response}\n").unwrap();
        }
        write!(out, "# Instruction\n{}\n", self.instruction).unwrap();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingResponse {
    pub per_robot_goals: BTreeMap<String, GoalExpr>,
    pub raw_text: String,
}

const ROBOT_TAG: &str = "ROBOT";
const GOAL_TAG: &str = "GOAL";

/// Parses `ROBOT <name>: GOAL <sexpr>` blocks. A block runs until the next
/// line starting with `ROBOT`; text before the first block is ignored.
/// Robots not mentioned get the no-op goal.
pub fn parse_response(raw: &str, robots: &[&str]) -> Result<GroundingResponse, GroundingError> {
    let fail = |message: String| GroundingError::Parse { message, raw_text: raw.to_string() };
    let mut blocks: Vec<String> = Vec::new();
    for line in raw.lines() {
        let t = line.trim_start();
        if let Some(rest) = t.strip_prefix(ROBOT_TAG) {
            blocks.push(rest.to_string());
        } else if let Some(b) = blocks.last_mut() {
            b.push('\n');
            b.push_str(line);
        }
    }
    if blocks.is_empty() {
        return Err(fail("no ROBOT block".into()));
    }
    let mut goals = BTreeMap::new();
    for b in blocks {
        let (name, rest) = b.split_once(':').ok_or_else(|| fail("missing ':' after robot name".into()))?;
        let name = name.trim().to_lowercase();
        if !robots.contains(&name.as_str()) {
            return Err(fail(format!("unknown robot {name:?}")));
        }
        let rest = rest.trim_start();
        let body = rest.strip_prefix(GOAL_TAG).ok_or_else(|| fail(format!("missing GOAL for {name}")))?;
        let goal = parse_goal(body).map_err(|e| fail(format!("{name}: {e}")))?;
        if goals.insert(name.clone(), goal).is_some() {
            return Err(fail(format!("duplicate block for {name}")));
        }
    }
    for r in robots {
        goals.entry(r.to_string()).or_insert_with(GoalExpr::noop);
    }
    Ok(GroundingResponse { per_robot_goals: goals, raw_text: raw.to_string() })
}

/// Sends the rendered prompt once and parses the reply.
pub fn ground(instruction: &str, bundle: &PromptBundle, client: &dyn LlmClient) -> Result<GroundingResponse, GroundingError> {
    let bundle = bundle.with_instruction(instruction);
    let raw = client.complete(instruction, &bundle.render())?;
    let robots: Vec<&str> = bundle.capability_descriptions.keys().map(String::as_str).collect();
    let response = parse_response(&raw, &robots);
    if let Err(e) = &response {
        log::warn!("grounding failed for {instruction:?}: {e}");
    }
    response
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_graph::{NodeId, SceneNode};
    use nalgebra::Vector3;

    fn graph() -> SceneGraph {
        let mut g = SceneGraph::new();
        g.add_node(SceneNode::new(NodeId::region(2), "parking lot", Vector3::new(0.0, 0.0, 0.0)));
        g.add_node(SceneNode::new(NodeId::place(0), "road", Vector3::new(1.0, 4.0, 0.0)));
        g.add_node(SceneNode::new(NodeId::object(0), "box", Vector3::new(1.23, 4.56, 0.0)));
        g.set_parent(NodeId::object(0), NodeId::place(0));
        g.set_parent(NodeId::place(0), NodeId::region(2));
        g
    }

    #[test]
    fn empty_scene_has_headers() {
        assert_eq!(serialize_scene(&SceneGraph::new()), "Objects:\nRegions:\n");
    }

    #[test]
    fn object_line_format() {
        let text = serialize_scene(&graph());
        assert_eq!(text, "Objects:\nobject_0: box at (1.2, 4.6, 0.0) in region_2\nRegions:\nregion_2: parking lot\n");
        assert_eq!(text, serialize_scene(&graph()));
    }

    #[test]
    fn negative_zero_is_printed_plainly() {
        let mut g = SceneGraph::new();
        g.add_node(SceneNode::new(NodeId::object(1), "cone", Vector3::new(-0.04, 2.0, -1.26)));
        assert!(serialize_scene(&g).contains("object_1: cone at (0.0, 2.0, -1.3)\n"));
    }

    #[test]
    fn canned_response_passthrough() {
        let bundle = PromptBundle::new(&graph(), default_capabilities());
        let client = MockClient::new([("Spot, inspect the box.", "ROBOT spot: GOAL (inspected object_39)")]);
        let r = ground("Spot, inspect the box.", &bundle, &client).unwrap();
        assert_eq!(r.per_robot_goals["spot"], GoalExpr::inspected("object_39"));
        assert_eq!(r.per_robot_goals["husky"], GoalExpr::noop());
    }

    #[test]
    fn four_object_conjunction() {
        let instruction = "Spot, inspect objects 39, 55, 395, and 397.";
        let reply = "ROBOT spot: GOAL (and (inspected object_39) (inspected object_55)\n  (inspected object_395) (inspected object_397))";
        let client = MockClient::new([(instruction, reply)]);
        let r = ground(instruction, &PromptBundle::new(&graph(), default_capabilities()), &client).unwrap();
        let want = GoalExpr::And(["39", "55", "395", "397"].iter().map(|i| GoalExpr::inspected(format!("object_{i}"))).collect());
        assert_eq!(r.per_robot_goals["spot"], want);
    }

    #[test]
    fn malformed_response_keeps_raw_text() {
        let raw = "ROBOT spot: GOAL (inspected";
        let e = parse_response(raw, &["spot"]).unwrap_err();
        assert_eq!(e.raw_text(), Some(raw));
        assert!(parse_response("I cannot help with that.", &["spot"]).is_err());
        assert!(parse_response("ROBOT rover: GOAL (and)", &["spot"]).is_err());
        assert!(parse_response("ROBOT spot: GOAL (and)\nROBOT spot: GOAL (and)", &["spot"]).is_err());
        assert!(parse_response("ROBOT spot: (at place_1)", &["spot"]).is_err());
    }

    #[test]
    fn prose_and_case_are_tolerated() {
        let raw = "Here is the plan.\nROBOT Husky: GOAL (at place_1)\nROBOT spot: GOAL (and\n  (inspected object_2))\n";
        let r = parse_response(raw, &["husky", "spot"]).unwrap();
        assert_eq!(r.per_robot_goals["husky"], GoalExpr::at("place_1"));
        assert_eq!(r.per_robot_goals["spot"], GoalExpr::And(vec![GoalExpr::inspected("object_2")]));
    }

    #[test]
    fn prompt_sections_in_order() {
        let b = PromptBundle::new(&graph(), default_capabilities()).with_instruction("Spot, go.");
        let text = b.render();
        let pos: Vec<usize> =
            ["# Task", "# Domain", "# Robots", "# Scene", "# Examples", "# Instruction"].iter().map(|h| text.find(h).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(text.ends_with("# Instruction\nSpot, go.\n"));
        assert!(!b.in_context_examples.is_empty());
    }

    #[test]
    fn examples_follow_the_response_format() {
        let robots: Vec<&str> = vec!["husky", "spot"];
        for (_, reply) in default_examples() {
            parse_response(&reply, &robots).unwrap();
        }
    }
}
