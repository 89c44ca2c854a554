//! Levenberg–Marquardt pose-graph optimization with robust loop edges.

use std::collections::{BTreeMap, BTreeSet};

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BetweenMeasurement, NodeKey, Pose3};

const JACOBIAN_STEP: f64 = 1e-6;
const LAMBDA_INIT: f64 = 1e-4;
const LAMBDA_MAX: f64 = 1e12;

#[derive(Clone, Debug, Default)]
pub struct PoseGraph {
    pub nodes: BTreeMap<NodeKey, Pose3>,
    pub odometry: Vec<BetweenMeasurement>,
    pub loops: Vec<BetweenMeasurement>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    pub huber_delta: f64,
    pub chi2_gate: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self { huber_delta: 1.0, chi2_gate: 16.0, max_iters: 100, rel_tol: 1e-9 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub poses: BTreeMap<NodeKey, Pose3>,
    /// Indices into `PoseGraph::loops`.
    pub rejected: Vec<usize>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Robust cost after every accepted step, per solve.
    pub cost_history: Vec<Vec<f64>>,
}

fn huber(chi2: f64, delta: f64) -> f64 {
    let r = chi2.sqrt();
    if r <= delta {
        chi2
    } else {
        2.0 * delta * r - delta * delta
    }
}

fn huber_weight(chi2: f64, delta: f64) -> f64 {
    let r = chi2.sqrt();
    if r <= delta {
        1.0
    } else {
        delta / r
    }
}

impl PoseGraph {
    pub fn gauge(&self) -> Option<NodeKey> {
        self.nodes.keys().next().copied()
    }

    fn check(&self) -> Result<()> {
        for e in self.odometry.iter().chain(&self.loops) {
            for k in [e.from, e.to] {
                if !self.nodes.contains_key(&k) {
                    return Err(Error::UnknownNode(k.to_string()));
                }
            }
        }
        let comps = self.components();
        if comps.len() > 1 {
            let describe = comps
                .iter()
                .map(|c| {
                    let mut by_robot: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
                    for k in c {
                        let e = by_robot.entry(k.robot).or_insert((k.index, k.index));
                        e.0 = e.0.min(k.index);
                        e.1 = e.1.max(k.index);
                    }
                    by_robot.iter().map(|(r, (lo, hi))| format!("r{r}:{lo}..={hi}")).collect()
                })
                .collect();
            return Err(Error::DisconnectedGraph(describe));
        }
        Ok(())
    }

    /// Connected components over odometry and loop edges.
    pub fn components(&self) -> Vec<Vec<NodeKey>> {
        let keys: Vec<NodeKey> = self.nodes.keys().copied().collect();
        let index: BTreeMap<NodeKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut parent: Vec<usize> = (0..keys.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in self.odometry.iter().chain(&self.loops) {
            if let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<NodeKey>> = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(*k);
        }
        groups.into_values().collect()
    }

    /// Total robust cost: quadratic odometry terms plus Huber loop terms.
    pub fn cost(&self, poses: &BTreeMap<NodeKey, Pose3>, active: &[bool], delta: f64) -> f64 {
        let odo: f64 = self.odometry.iter().map(|e| e.chi2(&poses[&e.from], &poses[&e.to])).sum();
        let lc: f64 = self
            .loops
            .iter()
            .zip(active)
            .filter(|(_, a)| **a)
            .map(|(e, _)| huber(e.chi2(&poses[&e.from], &poses[&e.to]), delta))
            .sum();
        odo + lc
    }
}

fn numeric_jacobians(e: &BetweenMeasurement, from: &Pose3, to: &Pose3) -> (Matrix6<f64>, Matrix6<f64>) {
    let mut ja = Matrix6::zeros();
    let mut jb = Matrix6::zeros();
    for c in 0..6 {
        let mut d = Vector6::zeros();
        d[c] = JACOBIAN_STEP;
        let col_a = (e.residual(&from.retract(&d), to) - e.residual(&from.retract(&-d), to)) / (2.0 * JACOBIAN_STEP);
        let col_b = (e.residual(from, &to.retract(&d)) - e.residual(from, &to.retract(&-d))) / (2.0 * JACOBIAN_STEP);
        ja.set_column(c, &col_a);
        jb.set_column(c, &col_b);
    }
    (ja, jb)
}

struct Solver<'a> {
    graph: &'a PoseGraph,
    params: OptimizerParams,
    /// Free-variable slot of each node; the gauge node has none.
    slot: BTreeMap<NodeKey, usize>,
}

impl Solver<'_> {
    fn dim(&self) -> usize {
        self.slot.len() * 6
    }

    fn normal_equations(
        &self,
        poses: &BTreeMap<NodeKey, Pose3>,
        active: &[bool],
    ) -> (BTreeMap<(usize, usize), Matrix6<f64>>, Vec<f64>) {
        let mut blocks: BTreeMap<(usize, usize), Matrix6<f64>> = BTreeMap::new();
        let mut g = vec![0.0; self.dim()];
        let edges = self
            .graph
            .odometry
            .iter()
            .map(|e| (e, false))
            .chain(self.graph.loops.iter().zip(active).filter(|(_, a)| **a).map(|(e, _)| (e, true)));
        for (e, robust) in edges {
            let (pa, pb) = (&poses[&e.from], &poses[&e.to]);
            let r = e.residual(pa, pb);
            let mut w = *e.info();
            if robust {
                let chi2 = (r.transpose() * w * r)[(0, 0)];
                w *= huber_weight(chi2, self.params.huber_delta);
            }
            let (ja, jb) = numeric_jacobians(e, pa, pb);
            let parts = [(self.slot.get(&e.from), ja), (self.slot.get(&e.to), jb)];
            for (si, ji) in &parts {
                let Some(&si) = si else { continue };
                let gi = ji.transpose() * w * r;
                for k in 0..6 {
                    g[si * 6 + k] += gi[k];
                }
                for (sj, jj) in &parts {
                    let Some(&sj) = sj else { continue };
                    *blocks.entry((si, sj)).or_insert_with(Matrix6::zeros) += ji.transpose() * w * jj;
                }
            }
        }
        (blocks, g)
    }

    fn solve_step(
        &self,
        blocks: &BTreeMap<(usize, usize), Matrix6<f64>>,
        g: &[f64],
        lambda: f64,
    ) -> Option<Vec<f64>> {
        let n = self.dim();
        let mut triplets = Vec::with_capacity(blocks.len() * 36);
        for (&(bi, bj), m) in blocks {
            for r in 0..6 {
                for c in 0..6 {
                    let mut v = m[(r, c)];
                    if bi == bj && r == c {
                        v += lambda * (v.abs() + 1e-6);
                    }
                    if v != 0.0 {
                        triplets.push(Triplet::new(bi * 6 + r, bj * 6 + c, v));
                    }
                }
            }
        }
        let h = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets).ok()?;
        let llt = h.sp_cholesky(faer::Side::Lower).ok()?;
        let rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| -g[i]);
        let x = llt.solve(&rhs);
        let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    fn apply(&self, poses: &BTreeMap<NodeKey, Pose3>, dx: &[f64]) -> BTreeMap<NodeKey, Pose3> {
        poses
            .iter()
            .map(|(k, p)| match self.slot.get(k) {
                Some(&s) => (*k, p.retract(&Vector6::from_column_slice(&dx[s * 6..s * 6 + 6]))),
                None => (*k, *p),
            })
            .collect()
    }

    /// One LM solve; returns optimized poses, accepted-step costs, iterations.
    fn run(&self, start: BTreeMap<NodeKey, Pose3>, active: &[bool]) -> (BTreeMap<NodeKey, Pose3>, Vec<f64>, usize) {
        let delta = self.params.huber_delta;
        let mut poses = start;
        let mut cost = self.graph.cost(&poses, active, delta);
        let mut history = vec![cost];
        let mut lambda = LAMBDA_INIT;
        let mut iters = 0;
        if self.slot.is_empty() {
            return (poses, history, 0);
        }
        while iters < self.params.max_iters {
            iters += 1;
            let (blocks, g) = self.normal_equations(&poses, active);
            let mut accepted = false;
            while lambda < LAMBDA_MAX {
                if let Some(dx) = self.solve_step(&blocks, &g, lambda) {
                    let trial = self.apply(&poses, &dx);
                    let trial_cost = self.graph.cost(&trial, active, delta);
                    if trial_cost < cost {
                        let rel = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                        poses = trial;
                        cost = trial_cost;
                        history.push(cost);
                        lambda = (lambda / 10.0).max(1e-12);
                        accepted = true;
                        if rel < self.params.rel_tol {
                            return (poses, history, iters);
                        }
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !accepted || cost == 0.0 {
                break;
            }
        }
        (poses, history, iters)
    }
}

/// Optimizes the graph with the first node (lowest robot, lowest index)
/// held fixed. Loop edges whose chi² exceeds the gate after convergence are
/// dropped and the problem is solved once more.
pub fn optimize(graph: &PoseGraph, params: &OptimizerParams) -> Result<OptimizeReport> {
    graph.check()?;
    let gauge = graph.gauge();
    let slot: BTreeMap<NodeKey, usize> =
        graph.nodes.keys().filter(|k| Some(**k) != gauge).enumerate().map(|(i, k)| (*k, i)).collect();
    let solver = Solver { graph, params: *params, slot };
    let mut active = vec![true; graph.loops.len()];
    let initial_cost = graph.cost(&graph.nodes, &active, params.huber_delta);

    let (poses, h1, it1) = solver.run(graph.nodes.clone(), &active);
    let rejected: Vec<usize> = graph
        .loops
        .iter()
        .enumerate()
        .filter(|(_, e)| e.chi2(&poses[&e.from], &poses[&e.to]) > params.chi2_gate)
        .map(|(i, _)| i)
        .collect();
    let mut history = vec![h1];
    let mut iterations = it1;
    let poses = if rejected.is_empty() {
        poses
    } else {
        for &i in &rejected {
            active[i] = false;
        }
        let kept = PoseGraph {
            nodes: graph.nodes.clone(),
            odometry: graph.odometry.clone(),
            loops: graph.loops.iter().zip(&active).filter(|(_, a)| **a).map(|(e, _)| e.clone()).collect(),
        };
        kept.check()?;
        let (p2, h2, it2) = solver.run(poses, &active);
        history.push(h2);
        iterations += it2;
        p2
    };
    let final_cost = graph.cost(&poses, &active, params.huber_delta);
    Ok(OptimizeReport { poses, rejected, initial_cost, final_cost, iterations, cost_history: history })
}

/// Chains `edges` (consecutive keyframes of one robot) from `start`.
pub fn compose_chain(start: Pose3, edges: &[BetweenMeasurement]) -> Vec<Pose3> {
    let mut out = vec![start];
    for e in edges {
        let last = *out.last().expect("non-empty");
        out.push(last.compose(&e.relative));
    }
    out
}

/// Node keys of every robot, for reporting.
pub fn robots(graph: &PoseGraph) -> BTreeSet<u32> {
    graph.nodes.keys().map(|k| k.robot).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_error;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn key(i: usize) -> NodeKey {
        NodeKey::new(0, i)
    }

    fn odo(i: usize, j: usize, rel: Pose3) -> BetweenMeasurement {
        BetweenMeasurement::with_sigmas(key(i), key(j), rel, 0.01, 0.05).unwrap()
    }

    #[test]
    fn consistent_chain_is_already_optimal() {
        let steps: Vec<Pose3> = (0..6).map(|i| Pose3::from_yaw(0.1 * i as f64, Vector3::new(1.0, 0.2, 0.0))).collect();
        let mut g = PoseGraph::default();
        let edges: Vec<_> = steps.iter().enumerate().map(|(i, s)| odo(i, i + 1, *s)).collect();
        for (i, p) in compose_chain(Pose3::identity(), &edges).into_iter().enumerate() {
            g.nodes.insert(key(i), p);
        }
        g.odometry = edges;
        let rep = optimize(&g, &OptimizerParams::default()).unwrap();
        for (k, p) in &g.nodes {
            assert!(pose_error(p, &rep.poses[k]).translation < 1e-9);
        }
        assert!(rep.final_cost < 1e-18);
    }

    /// Square of side 10 with 1 m steps; returns ground truth and drifted
    /// odometry measurements.
    fn square() -> (Vec<Pose3>, Vec<BetweenMeasurement>) {
        let mut truth = vec![Pose3::identity()];
        for i in 0..40 {
            let yaw = if i % 10 == 9 { std::f64::consts::FRAC_PI_2 } else { 0.0 };
            let step = Pose3::from_yaw(yaw, Vector3::new(1.0, 0.0, 0.0));
            let last = *truth.last().unwrap();
            truth.push(last.compose(&step));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 0.01).unwrap();
        let edges = truth
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let rel = w[0].between(&w[1]);
                let noise = Pose3::from_scaled_axis(
                    Vector3::new(0.0, 0.0, 0.004 + 0.5 * n.sample(&mut rng)),
                    Vector3::new(n.sample(&mut rng), n.sample(&mut rng), 0.0),
                );
                odo(i, i + 1, rel.compose(&noise))
            })
            .collect();
        (truth, edges)
    }

    fn square_graph() -> (PoseGraph, Vec<Pose3>) {
        let (truth, edges) = square();
        let mut g = PoseGraph::default();
        for (i, p) in compose_chain(Pose3::identity(), &edges).into_iter().enumerate() {
            g.nodes.insert(key(i), p);
        }
        g.odometry = edges;
        g.loops.push(BetweenMeasurement::with_sigmas(key(0), key(40), truth[0].between(&truth[40]), 0.01, 0.05).unwrap());
        (g, truth)
    }

    #[test]
    fn loop_closure_reduces_cost_and_drift() {
        let (g, truth) = square_graph();
        let rep = optimize(&g, &OptimizerParams::default()).unwrap();
        assert!(rep.final_cost < rep.initial_cost);
        let lc = &g.loops[0];
        assert!(lc.chi2(&rep.poses[&lc.from], &rep.poses[&lc.to]) < 16.0);
        assert!(rep.rejected.is_empty());
        let before = pose_error(&g.nodes[&key(40)], &truth[40]).translation;
        let after = pose_error(&rep.poses[&key(40)], &truth[40]).translation;
        assert!(after < before, "{after} !< {before}");
        for h in &rep.cost_history {
            assert!(h.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn gross_outlier_is_rejected() {
        let (mut g, truth) = square_graph();
        for (a, b) in [(5, 35), (2, 38), (12, 28), (15, 25), (20, 40)] {
            g.loops.push(BetweenMeasurement::with_sigmas(key(a), key(b), truth[a].between(&truth[b]), 0.01, 0.05).unwrap());
        }
        g.loops.remove(0);
        let bogus = Pose3::from_yaw(2.5, Vector3::new(30.0, -12.0, 4.0));
        g.loops.insert(2, BetweenMeasurement::with_sigmas(key(8), key(30), bogus, 0.01, 0.05).unwrap());
        let rep = optimize(&g, &OptimizerParams::default()).unwrap();
        assert_eq!(rep.rejected, vec![2]);
        // The oracle: after the solve, only the bogus edge has a large residual.
        for (i, e) in g.loops.iter().enumerate() {
            let chi2 = e.chi2(&rep.poses[&e.from], &rep.poses[&e.to]);
            assert_eq!(chi2 > 16.0, i == 2, "edge {i} chi2 {chi2}");
        }
    }

    #[test]
    fn disconnected_graph_lists_components() {
        let mut g = PoseGraph::default();
        for r in 0..2 {
            for i in 0..3 {
                g.nodes.insert(NodeKey::new(r, i), Pose3::identity());
            }
            for i in 0..2 {
                g.odometry.push(
                    BetweenMeasurement::with_sigmas(NodeKey::new(r, i), NodeKey::new(r, i + 1), Pose3::identity(), 0.1, 0.1)
                        .unwrap(),
                );
            }
        }
        match optimize(&g, &OptimizerParams::default()) {
            Err(Error::DisconnectedGraph(c)) => assert_eq!(c, vec![vec!["r0:0..=2".to_string()], vec!["r1:0..=2".to_string()]]),
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn gauge_invariance() {
        let (g, _) = square_graph();
        let shift = Pose3::from_scaled_axis(Vector3::new(0.3, -0.2, 1.0), Vector3::new(4.0, -7.0, 2.0));
        let mut moved = g.clone();
        for p in moved.nodes.values_mut() {
            *p = shift.compose(p);
        }
        let a = optimize(&g, &OptimizerParams::default()).unwrap();
        let b = optimize(&moved, &OptimizerParams::default()).unwrap();
        for i in 0..40 {
            let ra = a.poses[&key(i)].between(&a.poses[&key(i + 1)]);
            let rb = b.poses[&key(i)].between(&b.poses[&key(i + 1)]);
            let e = pose_error(&ra, &rb);
            assert!(e.translation < 1e-6 && e.rotation_deg < 1e-4, "{e:?}");
        }
    }
}
