use std::collections::BTreeSet;

use super::{GroundedPlan, Mission, PlanStep};
use crate::places::NavGraph;

const COST_TOL: f64 = 1e-6;

/// Replays `plan` from the mission start and lists every violation: broken
/// chaining, non-adjacent or avoided cells, wrong costs, out-of-range
/// inspections and an unsatisfied goal.
pub fn check_plan(plan: &GroundedPlan, nav: &NavGraph, mission: &Mission) -> Vec<String> {
    let mut bad = Vec::new();
    let mut current = mission.start;
    let mut visited = BTreeSet::from([current]);
    let mut inspected = BTreeSet::new();
    let mut total = 0.0;
    if mission.avoid.contains(&current) {
        bad.push(format!("start place_{current} is avoided"));
    }
    for (i, step) in plan.steps.iter().enumerate() {
        match step {
            PlanStep::Move { to, path, cost } => {
                if path.first() != Some(&current) {
                    bad.push(format!("step {i}: path does not start at place_{current}"));
                }
                if path.last() != Some(to) {
                    bad.push(format!("step {i}: path does not end at place_{to}"));
                }
                let mut length = 0.0;
                for w in path.windows(2) {
                    match nav.neighbors(w[0]).iter().find(|e| e.0 == w[1]) {
                        Some(&(_, d)) => length += d,
                        None => bad.push(format!("step {i}: place_{} and place_{} are not adjacent", w[0], w[1])),
                    }
                }
                for c in path {
                    if !nav.contains(*c) {
                        bad.push(format!("step {i}: place_{c} is not traversable"));
                    }
                    if mission.avoid.contains(c) {
                        bad.push(format!("step {i}: enters avoided place_{c}"));
                    }
                }
                if (length - cost).abs() > COST_TOL {
                    bad.push(format!("step {i}: cost {cost} but path length {length}"));
                }
                visited.extend(path.iter().copied());
                total += cost;
                current = *to;
            }
            PlanStep::Inspect { object, from } => {
                if *from != current {
                    bad.push(format!("step {i}: inspects from place_{from} while at place_{current}"));
                }
                if !mission.in_range(nav, current, *object) {
                    bad.push(format!("step {i}: object_{object} out of range"));
                }
                inspected.insert(*object);
            }
        }
    }
    if (total - plan.total_cost).abs() > COST_TOL {
        bad.push(format!("total cost {} but steps sum to {total}", plan.total_cost));
    }
    if !mission.holds(current, &visited, &inspected) {
        bad.push("goal not satisfied".into());
    }
    bad
}

pub fn validate_plan(plan: &GroundedPlan, nav: &NavGraph, mission: &Mission) -> bool {
    check_plan(plan, nav, mission).is_empty()
}

#[cfg(test)]
mod tests {
    use super::super::tests::{line, scene};
    use super::super::*;
    use crate::pddl::parse_goal;
    use crate::scene_graph::SceneNode;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use std::collections::BinaryHeap;

    fn mission(nav: &NavGraph, graph: &SceneGraph, start: usize, goal: &str) -> Mission {
        Mission::resolve(graph, nav, start, &parse_goal(goal).unwrap(), DEFAULT_INSPECT_RANGE).unwrap()
    }

    #[test]
    fn rejects_broken_plans() {
        let nav = line(3);
        let g = scene(&nav, &[(Vector3::new(10.0, 1.0, 0.0), 2)]);
        let m = mission(&nav, &g, 0, "(inspected object_0)");
        let good = GroundedPlan {
            steps: vec![PlanStep::Move { to: 2, path: vec![0, 1, 2], cost: 10.0 }, PlanStep::Inspect { object: 0, from: 2 }],
            total_cost: 10.0,
        };
        assert!(validate_plan(&good, &nav, &m));
        let skip = GroundedPlan { steps: vec![PlanStep::Move { to: 2, path: vec![0, 2], cost: 10.0 }], ..good.clone() };
        assert!(check_plan(&skip, &nav, &m).iter().any(|v| v.contains("not adjacent")));
        let far = GroundedPlan { steps: vec![PlanStep::Inspect { object: 0, from: 0 }], total_cost: 0.0 };
        assert!(check_plan(&far, &nav, &m).iter().any(|v| v.contains("out of range")));
        let mut cost = good.clone();
        cost.total_cost = 11.0;
        assert!(!validate_plan(&cost, &nav, &m));
        let avoid = mission(&nav, &g, 0, "(and (inspected object_0) (not (visited place_1)))");
        assert!(check_plan(&good, &nav, &avoid).iter().any(|v| v.contains("avoided")));
    }

    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
    struct Prim {
        at: usize,
        visited: u32,
        inspected: u32,
    }

    /// Dijkstra over single-edge moves and inspections on the full state
    /// (place, every visited place, every inspected object).
    fn oracle(nav: &NavGraph, m: &Mission) -> Option<f64> {
        let cells: Vec<usize> = nav.centers.keys().copied().collect();
        let objs: Vec<u64> = m.objects.keys().copied().collect();
        let bit = |c: usize| 1u32 << cells.iter().position(|x| *x == c).unwrap();
        if m.avoid.contains(&m.start) {
            return None;
        }
        let start = Prim { at: m.start, visited: bit(m.start), inspected: 0 };
        let mut best = std::collections::HashMap::from([(start, 0.0)]);
        let mut heap = BinaryHeap::from([(std::cmp::Reverse(Cost(0.0)), start)]);
        while let Some((std::cmp::Reverse(Cost(d)), s)) = heap.pop() {
            if d > best[&s] {
                continue;
            }
            let visited = cells.iter().enumerate().filter(|(i, _)| s.visited >> i & 1 == 1).map(|(_, c)| *c).collect();
            let inspected = objs.iter().enumerate().filter(|(i, _)| s.inspected >> i & 1 == 1).map(|(_, o)| *o).collect();
            if m.holds(s.at, &visited, &inspected) {
                return Some(d);
            }
            let mut next = Vec::new();
            for &(n, w) in nav.neighbors(s.at) {
                if !m.avoid.contains(&n) {
                    next.push((Prim { at: n, visited: s.visited | bit(n), ..s }, d + w));
                }
            }
            for (i, o) in objs.iter().enumerate() {
                if m.in_range(nav, s.at, *o) {
                    next.push((Prim { inspected: s.inspected | 1 << i, ..s }, d));
                }
            }
            for (t, nd) in next {
                if best.get(&t).is_none_or(|b| nd < *b) {
                    best.insert(t, nd);
                    heap.push((std::cmp::Reverse(Cost(nd)), t));
                }
            }
        }
        None
    }

    #[derive(PartialEq)]
    struct Cost(f64);

    impl Eq for Cost {}

    impl PartialOrd for Cost {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    impl Ord for Cost {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }

    /// Random planar graph on up to 7 cells with up to 3 objects.
    fn arb_world() -> impl Strategy<Value = (NavGraph, SceneGraph)> {
        (3usize..=7)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    prop::collection::vec((0.0..20.0f64, 0.0..20.0f64), n),
                    prop::collection::vec(prop::bool::weighted(0.5), n * (n - 1) / 2),
                    prop::collection::vec((0usize..n, -2.0..2.0f64, -2.0..2.0f64), 0..=3),
                )
            })
            .prop_map(|(n, xy, links, objs)| {
                let mut g = SceneGraph::new();
                for (i, (x, y)) in xy.iter().enumerate() {
                    g.add_node(SceneNode::new(NodeId::place(i as u64), "grass", Vector3::new(*x, *y, 0.0)));
                }
                let mut k = 0;
                for a in 0..n {
                    for b in a + 1..n {
                        // Keep a spanning path so most goals are reachable.
                        if links[k] || b == a + 1 {
                            g.add_adjacency(NodeId::place(a as u64), NodeId::place(b as u64));
                        }
                        k += 1;
                    }
                }
                let nav = NavGraph::from_scene_graph(&g, &BTreeSet::from(["grass".to_string()]));
                let placed: Vec<(Vector3<f64>, usize)> = objs
                    .iter()
                    .map(|(p, dx, dy)| (nav.centers[p] + Vector3::new(*dx, *dy, 0.0), *p))
                    .collect();
                (nav.clone(), scene(&nav, &placed))
            })
    }

    fn arb_goal_for(places: usize, objects: usize) -> impl Strategy<Value = GoalExpr> {
        let mut leaves: Vec<BoxedStrategy<GoalExpr>> = vec![
            (0..places).prop_map(|p| GoalExpr::visited(format!("place_{p}"))).boxed(),
            (0..places).prop_map(|p| GoalExpr::at(format!("place_{p}"))).boxed(),
        ];
        if objects > 0 {
            leaves.push((0..objects).prop_map(|o| GoalExpr::inspected(format!("object_{o}"))).boxed());
        }
        let leaf = prop::strategy::Union::new(leaves);
        leaf.prop_recursive(2, 8, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..=3).prop_map(GoalExpr::And),
                prop::collection::vec(inner.clone(), 1..=2).prop_map(GoalExpr::Or),
                inner.prop_map(GoalExpr::negate),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn matches_exhaustive_search(
            (nav, graph, goal, start) in arb_world().prop_flat_map(|(nav, graph)| {
                let n = nav.centers.len();
                let o = graph.layer_nodes(crate::scene_graph::Layer::Object).count();
                (Just(nav), Just(graph), arb_goal_for(n, o), 0..n)
            })
        ) {
            let m = Mission::resolve(&graph, &nav, start, &goal, DEFAULT_INSPECT_RANGE).unwrap();
            let want = oracle(&nav, &m);
            let got = plan(&nav, &m, &PlannerParams::default()).unwrap();
            match (&got, want) {
                (PlanOutcome::Found(p), Some(c)) => {
                    let v = check_plan(p, &nav, &m);
                    prop_assert!(v.is_empty(), "{:?}", v);
                    prop_assert!((p.total_cost - c).abs() < 1e-6, "planner {} oracle {} goal {}", p.total_cost, c, crate::pddl::print_goal(&goal));
                }
                (PlanOutcome::Infeasible, None) => {}
                _ => prop_assert!(false, "planner {:?} oracle {:?} goal {}", got, want, crate::pddl::print_goal(&goal)),
            }
        }
    }
}
