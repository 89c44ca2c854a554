//! Maximum-weight clique search over the pairwise consistency graph.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest candidate count solved exactly.
pub const EXACT_LIMIT: usize = 60;
const GREEDY_RESTARTS: usize = 10;
const GREEDY_SEED: u64 = 0x0b1e_c7c1_19e5;
const TIE_EPS: f64 = 1e-12;

/// Undirected graph over weighted vertices `0..n`.
pub struct ConsistencyGraph {
    weights: Vec<f64>,
    /// Group keys for the one-to-one bound: (source object, target object).
    groups: Vec<(usize, usize)>,
    adj: Vec<Vec<u64>>,
}

impl ConsistencyGraph {
    pub fn new(weights: Vec<f64>, groups: Vec<(usize, usize)>) -> Self {
        let n = weights.len();
        let words = n.div_ceil(64).max(1);
        Self { weights, groups, adj: vec![vec![0; words]; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        self.adj[u][v / 64] |= 1 << (v % 64);
        self.adj[v][u / 64] |= 1 << (u % 64);
    }

    pub fn connected(&self, u: usize, v: usize) -> bool {
        self.adj[u][v / 64] >> (v % 64) & 1 == 1
    }

    /// Best clique: exact branch-and-bound up to [`EXACT_LIMIT`] vertices,
    /// greedy expansion with restarts beyond. Ties go to the clique that
    /// contains the lowest-numbered vertices. Result is sorted.
    pub fn max_weight_clique(&self) -> Vec<usize> {
        if self.is_empty() {
            Vec::new()
        } else if self.len() <= EXACT_LIMIT {
            self.exact()
        } else {
            self.greedy()
        }
    }

    fn mask(&self, v: usize) -> u64 {
        self.adj[v][0]
    }

    fn exact(&self) -> Vec<usize> {
        let n = self.len();
        let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut search = Exact { g: self, best: 0, best_weight: f64::NEG_INFINITY };
        search.expand(0, 0.0, all);
        bits(search.best)
    }

    /// Upper bound on the weight any clique inside `cand` can add: at most one
    /// vertex per source object and one per target object.
    fn bound(&self, cand: u64) -> f64 {
        let mut by_src: Vec<(usize, f64)> = Vec::new();
        let mut by_dst: Vec<(usize, f64)> = Vec::new();
        for v in bits(cand) {
            let (s, d) = self.groups[v];
            let w = self.weights[v];
            upsert_max(&mut by_src, s, w);
            upsert_max(&mut by_dst, d, w);
        }
        let a: f64 = by_src.iter().map(|x| x.1).sum();
        let b: f64 = by_dst.iter().map(|x| x.1).sum();
        a.min(b)
    }

    fn greedy(&self) -> Vec<usize> {
        let n = self.len();
        let mut rng = ChaCha8Rng::seed_from_u64(GREEDY_SEED);
        let mut order: Vec<usize> = (0..n).collect();
        let score = |v: usize| self.weights[v] + (0..n).filter(|&u| self.connected(v, u)).map(|u| self.weights[u]).sum::<f64>();
        let mut heaviest = 0;
        let mut heaviest_score = score(0);
        for v in 1..n {
            let s = score(v);
            if s > heaviest_score + TIE_EPS {
                heaviest = v;
                heaviest_score = s;
            }
        }
        let mut best: Vec<usize> = Vec::new();
        let mut best_weight = f64::NEG_INFINITY;
        for restart in 0..GREEDY_RESTARTS {
            let seed = if restart == 0 {
                heaviest
            } else {
                order.shuffle(&mut rng);
                order[0]
            };
            let clique = self.grow(seed);
            let w: f64 = clique.iter().map(|&v| self.weights[v]).sum();
            if w > best_weight + TIE_EPS {
                best_weight = w;
                best = clique;
            }
        }
        best.sort_unstable();
        best
    }

    fn grow(&self, seed: usize) -> Vec<usize> {
        let mut clique = vec![seed];
        let mut cand: Vec<usize> = (0..self.len()).filter(|&u| self.connected(seed, u)).collect();
        while !cand.is_empty() {
            let score = |v: usize| {
                self.weights[v] + cand.iter().filter(|&&u| self.connected(v, u)).map(|&u| self.weights[u]).sum::<f64>()
            };
            let mut pick = cand[0];
            let mut pick_score = score(pick);
            for &v in &cand[1..] {
                let s = score(v);
                if s > pick_score + TIE_EPS {
                    pick = v;
                    pick_score = s;
                }
            }
            clique.push(pick);
            cand.retain(|&u| u != pick && self.connected(pick, u));
        }
        clique
    }
}

fn upsert_max(groups: &mut Vec<(usize, f64)>, key: usize, w: f64) {
    match groups.iter_mut().find(|g| g.0 == key) {
        Some(g) => g.1 = g.1.max(w),
        None => groups.push((key, w)),
    }
}

fn bits(mut m: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(m.count_ones() as usize);
    while m != 0 {
        out.push(m.trailing_zeros() as usize);
        m &= m - 1;
    }
    out
}

struct Exact<'a> {
    g: &'a ConsistencyGraph,
    best: u64,
    best_weight: f64,
}

impl Exact<'_> {
    fn expand(&mut self, clique: u64, weight: f64, mut cand: u64) {
        if cand == 0 {
            if weight > self.best_weight + TIE_EPS {
                self.best_weight = weight;
                self.best = clique;
            }
            return;
        }
        while cand != 0 {
            if weight + self.g.bound(cand) <= self.best_weight + TIE_EPS {
                return;
            }
            let v = cand.trailing_zeros() as usize;
            let bit = 1u64 << v;
            cand &= !bit;
            self.expand(clique | bit, weight + self.g.weights[v], cand & self.g.mask(v));
        }
        if weight > self.best_weight + TIE_EPS {
            self.best_weight = weight;
            self.best = clique;
        }
    }
}
