//! Best-first task planning over goal formulas, with move actions checked
//! lazily against shortest paths on the navigation graph.

mod path;
mod validate;

pub use path::path_stream;
pub use validate::{check_plan, validate_plan};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pddl::problem::resolve_symbol;
use crate::pddl::{Atom, GoalExpr, Predicate};
use crate::places::NavGraph;
use crate::scene_graph::{Layer, NodeId, SceneGraph};

pub const DEFAULT_INSPECT_RANGE: f64 = 3.0;
pub const DEFAULT_NODE_BUDGET: usize = 100_000;
/// Soft-avoid sets up to this size are searched exhaustively.
const MAX_SOFT_SUBSETS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    pub inspect_range: f64,
    pub node_budget: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self { inspect_range: DEFAULT_INSPECT_RANGE, node_budget: DEFAULT_NODE_BUDGET }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PlanStep {
    Move { to: usize, path: Vec<usize>, cost: f64 },
    Inspect { object: u64, from: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundedPlan {
    pub steps: Vec<PlanStep>,
    #[serde(rename = "cost")]
    pub total_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlanOutcome {
    Found(GroundedPlan),
    /// Every reachable state was explored without satisfying the goal.
    Infeasible,
    /// The node budget ran out first; feasibility is unknown.
    BudgetExhausted,
}

impl PlanOutcome {
    pub fn plan(&self) -> Option<&GroundedPlan> {
        match self {
            PlanOutcome::Found(p) => Some(p),
            _ => None,
        }
    }
}

/// A planning query with every goal symbol resolved against the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Mission {
    pub start: usize,
    pub goal: GoalExpr,
    /// Cell standing for each `visited`/`at` argument.
    pub places: BTreeMap<String, usize>,
    /// Object id for each `inspected` argument.
    pub targets: BTreeMap<String, u64>,
    /// Positions of every object in the graph.
    pub objects: BTreeMap<u64, Vector3<f64>>,
    pub inspect_range: f64,
    /// Places that must never be entered.
    pub avoid: BTreeSet<usize>,
}

/// Top-level conjuncts of the form `(not (visited p))`.
pub fn hard_avoid_atoms(goal: &GoalExpr) -> Vec<&Atom> {
    let conjuncts: Vec<&GoalExpr> = match goal {
        GoalExpr::And(xs) => xs.iter().collect(),
        g => vec![g],
    };
    conjuncts
        .into_iter()
        .filter_map(|c| match c {
            GoalExpr::Not(inner) => match inner.as_ref() {
                GoalExpr::Atom(a) if a.predicate == Predicate::Visited => Some(a),
                _ => None,
            },
            _ => None,
        })
        .collect()
}

/// `visited` atoms that occur under an odd number of negations anywhere.
fn negative_visited(goal: &GoalExpr, negated: bool, out: &mut BTreeSet<Atom>) {
    match goal {
        GoalExpr::Atom(a) => {
            if negated && a.predicate == Predicate::Visited {
                out.insert(a.clone());
            }
        }
        GoalExpr::And(xs) | GoalExpr::Or(xs) => xs.iter().for_each(|x| negative_visited(x, negated, out)),
        GoalExpr::Not(x) => negative_visited(x, !negated, out),
    }
}

fn has_negative_at(goal: &GoalExpr, negated: bool) -> bool {
    match goal {
        GoalExpr::Atom(a) => negated && a.predicate == Predicate::At,
        GoalExpr::And(xs) | GoalExpr::Or(xs) => xs.iter().any(|x| has_negative_at(x, negated)),
        GoalExpr::Not(x) => has_negative_at(x, !negated),
    }
}

impl Mission {
    /// Resolves goal symbols. A `visited`/`at` object stands for its parent
    /// place when that place is navigable, else the nearest navigable place.
    pub fn resolve(graph: &SceneGraph, nav: &NavGraph, start: usize, goal: &GoalExpr, inspect_range: f64) -> Result<Mission> {
        if !nav.contains(start) {
            return Err(Error::UnknownCell(start));
        }
        let goal = goal.canonicalize();
        let mut places = BTreeMap::new();
        let mut targets = BTreeMap::new();
        for a in goal.atoms() {
            let id = resolve_symbol(graph, a.predicate, &a.arg)?;
            match a.predicate {
                Predicate::Inspected => {
                    targets.insert(a.arg.clone(), id.index());
                }
                Predicate::Visited | Predicate::At => {
                    let cell = place_for(graph, nav, id).ok_or_else(|| Error::UnknownCell(id.index() as usize))?;
                    places.insert(a.arg.clone(), cell);
                }
            }
        }
        let objects = graph.layer_nodes(Layer::Object).map(|n| (n.id.index(), n.position)).collect();
        let avoid = hard_avoid_atoms(&goal).iter().map(|a| places[&a.arg]).collect();
        Ok(Mission { start, goal, places, targets, objects, inspect_range, avoid })
    }

    pub fn holds(&self, current: usize, visited: &BTreeSet<usize>, inspected: &BTreeSet<u64>) -> bool {
        self.goal.evaluate(&|a: &Atom| match a.predicate {
            Predicate::Visited => visited.contains(&self.places[&a.arg]),
            Predicate::At => current == self.places[&a.arg],
            Predicate::Inspected => inspected.contains(&self.targets[&a.arg]),
        })
    }

    pub fn in_range(&self, nav: &NavGraph, cell: usize, object: u64) -> bool {
        match (nav.center(cell), self.objects.get(&object)) {
            (Some(c), Some(o)) => (c - o).norm() <= self.inspect_range + 1e-9,
            _ => false,
        }
    }
}

fn place_for(graph: &SceneGraph, nav: &NavGraph, id: NodeId) -> Option<usize> {
    match id.layer() {
        Layer::SurfacePlace => Some(id.index() as usize),
        Layer::Object => {
            let parent = graph.parent_of(id).filter(|p| p.layer() == Layer::SurfacePlace).map(|p| p.index() as usize);
            match parent {
                Some(p) if nav.contains(p) => Some(p),
                _ => nav.nearest(&graph.node(id)?.position),
            }
        }
        _ => None,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    current: usize,
    visited: u64,
    inspected: u64,
}

struct Node {
    key: Key,
    g: f64,
    parent: Option<usize>,
    step: Option<PlanStep>,
}

enum Task {
    Expand(usize),
    Move { node: usize, target: usize, variant: usize },
}

struct Entry {
    cost: f64,
    seq: u64,
    task: Task,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Uniform-cost search over (place, visited goal places, inspected goal
/// objects). Moves are queued at their straight-line cost and replaced by
/// their true path cost once popped; inspections cost nothing.
pub fn plan(nav: &NavGraph, mission: &Mission, params: &PlannerParams) -> Result<PlanOutcome> {
    let mentioned: Vec<usize> = mission.places.values().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let goal_objects: Vec<u64> = mission.targets.values().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if mentioned.len() > 64 || goal_objects.len() > 64 {
        return Err(Error::InvalidParameter("more than 64 goal places or objects".into()));
    }
    let place_bit: HashMap<usize, u64> = mentioned.iter().enumerate().map(|(i, p)| (*p, 1u64 << i)).collect();
    let path_bits = |path: &[usize]| path.iter().filter_map(|c| place_bit.get(c)).fold(0, |m, b| m | b);
    let decode = |key: &Key| {
        let visited: BTreeSet<usize> =
            mentioned.iter().enumerate().filter(|(i, _)| key.visited >> i & 1 == 1).map(|(_, p)| *p).collect();
        let inspected: BTreeSet<u64> =
            goal_objects.iter().enumerate().filter(|(i, _)| key.inspected >> i & 1 == 1).map(|(_, o)| *o).collect();
        (visited, inspected)
    };

    if mission.avoid.contains(&mission.start) {
        return Ok(PlanOutcome::Infeasible);
    }

    // Places whose visit could falsify the goal; moves try every subset.
    let mut negative = BTreeSet::new();
    negative_visited(&mission.goal, false, &mut negative);
    let soft: Vec<usize> = negative
        .iter()
        .map(|a| mission.places[&a.arg])
        .filter(|p| !mission.avoid.contains(p))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let variants: Vec<BTreeSet<usize>> = if soft.len() <= MAX_SOFT_SUBSETS {
        (0..1usize << soft.len())
            .map(|m| {
                let mut v = mission.avoid.clone();
                v.extend(soft.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, p)| *p));
                v
            })
            .collect()
    } else {
        let mut all = mission.avoid.clone();
        all.extend(&soft);
        vec![mission.avoid.clone(), all]
    };

    let mut move_targets: BTreeSet<usize> = mentioned.iter().copied().collect();
    for &o in &goal_objects {
        move_targets.extend(nav.centers.keys().filter(|&&c| mission.in_range(nav, c, o)));
    }
    if has_negative_at(&mission.goal, false) {
        move_targets.extend(nav.centers.keys());
    }
    move_targets.retain(|c| nav.contains(*c) && !mission.avoid.contains(c));

    let start_bits = place_bit.get(&mission.start).copied().unwrap_or(0);
    let mut nodes = vec![Node {
        key: Key { current: mission.start, visited: start_bits, inspected: 0 },
        g: 0.0,
        parent: None,
        step: None,
    }];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Entry>, cost: f64, task: Task| {
        heap.push(Entry { cost, seq, task });
        seq += 1;
    };
    push(&mut heap, 0.0, Task::Expand(0));
    let mut closed: HashSet<Key> = HashSet::new();
    let mut paths: HashMap<(usize, usize, usize), Option<(Vec<usize>, f64)>> = HashMap::new();
    let mut work = 0usize;

    while let Some(Entry { task, .. }) = heap.pop() {
        work += 1;
        if work > params.node_budget {
            return Ok(PlanOutcome::BudgetExhausted);
        }
        match task {
            Task::Expand(n) => {
                let key = nodes[n].key;
                if !closed.insert(key) {
                    continue;
                }
                let (visited, inspected) = decode(&key);
                if mission.holds(key.current, &visited, &inspected) {
                    return Ok(PlanOutcome::Found(reconstruct(&nodes, n)));
                }
                let g = nodes[n].g;
                for (i, &o) in goal_objects.iter().enumerate() {
                    if key.inspected >> i & 1 == 0 && mission.in_range(nav, key.current, o) {
                        let child = Key { inspected: key.inspected | 1 << i, ..key };
                        if !closed.contains(&child) {
                            nodes.push(Node {
                                key: child,
                                g,
                                parent: Some(n),
                                step: Some(PlanStep::Inspect { object: o, from: key.current }),
                            });
                            push(&mut heap, g, Task::Expand(nodes.len() - 1));
                        }
                    }
                }
                let here = nav.centers[&key.current];
                for &t in &move_targets {
                    if t == key.current {
                        continue;
                    }
                    let optimistic = g + (nav.centers[&t] - here).norm();
                    for variant in 0..variants.len() {
                        push(&mut heap, optimistic, Task::Move { node: n, target: t, variant });
                    }
                }
            }
            Task::Move { node, target, variant } => {
                let from = nodes[node].key.current;
                let found = match paths.get(&(from, target, variant)) {
                    Some(p) => p.clone(),
                    None => {
                        let p = path_stream(nav, from, target, &variants[variant])?;
                        paths.insert((from, target, variant), p.clone());
                        p
                    }
                };
                let Some((path, cost)) = found else { continue };
                let parent = &nodes[node];
                let key = Key { current: target, visited: parent.key.visited | path_bits(&path), inspected: parent.key.inspected };
                if closed.contains(&key) {
                    continue;
                }
                let g = parent.g + cost;
                nodes.push(Node { key, g, parent: Some(node), step: Some(PlanStep::Move { to: target, path, cost }) });
                push(&mut heap, g, Task::Expand(nodes.len() - 1));
            }
        }
    }
    Ok(PlanOutcome::Infeasible)
}

fn reconstruct(nodes: &[Node], mut n: usize) -> GroundedPlan {
    let total_cost = nodes[n].g;
    let mut steps = Vec::new();
    while let Some(p) = nodes[n].parent {
        steps.push(nodes[n].step.clone().expect("non-root has a step"));
        n = p;
    }
    steps.reverse();
    GroundedPlan { steps, total_cost }
}

impl GroundedPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}
