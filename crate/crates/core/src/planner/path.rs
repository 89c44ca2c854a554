use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::error::{Error, Result};
use crate::places::NavGraph;

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    cell: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // Min-heap on f, then on cell id.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path over `nav` with `avoid` removed, by A* on center
/// distances. `None` when `to` is unreachable or either end is avoided.
pub fn path_stream(nav: &NavGraph, from: usize, to: usize, avoid: &BTreeSet<usize>) -> Result<Option<(Vec<usize>, f64)>> {
    let goal = *nav.center(to).ok_or(Error::UnknownCell(to))?;
    nav.center(from).ok_or(Error::UnknownCell(from))?;
    if avoid.contains(&from) || avoid.contains(&to) {
        return Ok(None);
    }
    let h = |c: usize| (nav.centers[&c] - goal).norm();
    let mut best: BTreeMap<usize, (f64, Option<usize>)> = BTreeMap::new();
    let mut closed = BTreeSet::new();
    let mut open = BinaryHeap::new();
    best.insert(from, (0.0, None));
    open.push(Open { f: h(from), g: 0.0, cell: from });
    while let Some(Open { g, cell, .. }) = open.pop() {
        if !closed.insert(cell) {
            continue;
        }
        if cell == to {
            let mut path = vec![to];
            let mut cur = to;
            while let Some((_, Some(p))) = best.get(&cur) {
                path.push(*p);
                cur = *p;
            }
            path.reverse();
            return Ok(Some((path, g)));
        }
        for &(next, w) in nav.neighbors(cell) {
            if avoid.contains(&next) || closed.contains(&next) {
                continue;
            }
            let ng = g + w;
            let better = match best.get(&next) {
                None => true,
                Some((old, Some(op))) => ng < *old || (ng == *old && cell < *op),
                Some((_, None)) => false,
            };
            if better {
                best.insert(next, (ng, Some(cell)));
                open.push(Open { f: ng + h(next), g: ng, cell: next });
            }
        }
    }
    Ok(None)
}
