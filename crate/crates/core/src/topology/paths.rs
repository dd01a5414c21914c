//! Hop-bounded node-disjoint paths at minimum relay cost.
//!
//! Each search builds a layered copy of the graph: node `v` at hop `l` is a
//! unit-capacity split arc `(v,l)in → (v,l)out` carrying the relay cost, and
//! every edge `{u,v}` becomes arcs `(u,l)out → (v,l+1)in`. A flow of value `k`
//! from the source to the collapsed sink is a set of `k` hop-bounded walks.
//! Capacity per layer alone lets two walks meet at the same node on
//! different hops, so conflicts are removed by branching on the layer sets
//! a conflicting node may occupy, with the relaxed flow cost as bound.

use std::collections::{BTreeMap, BTreeSet};

use super::flow::FlowNet;
use super::NetworkGraph;
use crate::scenario::{NodeId, Role};

/// Weight of one relay relative to one hop in the flow objective. Larger
/// than any possible hop total, so hop count only breaks ties.
const RELAY_WEIGHT: i64 = 100_000;

/// Relaxations solved per query before settling for the best found.
const BRANCH_BUDGET: usize = 4_000;

/// Precomputed adjacency for repeated queries on one graph.
#[derive(Clone, Debug)]
pub struct PathSearch {
    ids: Vec<NodeId>,
    roles: Vec<Role>,
    adj: Vec<Vec<usize>>,
    sink: Option<usize>,
}

struct Query<'a> {
    source: usize,
    k: usize,
    h: usize,
    /// Relay cost per node index, `None` when the node may not be an intermediate.
    cost: &'a [Option<i64>],
}

struct Relaxed {
    cost: i64,
    /// Per path: (node index, layer) of each intermediate, in order.
    walks: Vec<Vec<(usize, usize)>>,
}

impl PathSearch {
    pub fn new(g: &NetworkGraph) -> Self {
        let ids: Vec<NodeId> = g.nodes().iter().map(|n| n.id).collect();
        let roles = g.nodes().iter().map(|n| n.role).collect();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for e in g.edges().filter(|e| e.provenance.is_traversable()) {
            if let (Some(&a), Some(&b)) = (index.get(&e.a), index.get(&e.b)) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let sink = g.sink().and_then(|s| index.get(&s).copied());
        PathSearch { ids, roles, adj, sink }
    }

    fn index_of(&self, id: NodeId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// `k` node-disjoint paths from `source` to the sink, each of at most
    /// `h_max` hops, minimising the summed cost of the distinct
    /// intermediates. `relay_cost` returns `None` for relays that may not be
    /// used; other sources are always usable at zero cost unless `forbidden`.
    pub fn solve(
        &self,
        source: NodeId,
        k: usize,
        h_max: u32,
        relay_cost: impl Fn(NodeId) -> Option<u32>,
        forbidden: &BTreeSet<NodeId>,
    ) -> Option<Vec<Vec<NodeId>>> {
        let (s, t) = (self.index_of(source)?, self.sink?);
        if k == 0 || h_max == 0 || s == t || forbidden.contains(&source) || forbidden.contains(&self.ids[t]) {
            return None;
        }
        let cost: Vec<Option<i64>> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                if i == s || i == t || forbidden.contains(id) {
                    return None;
                }
                match self.roles[i] {
                    Role::Source => Some(0),
                    Role::PotentialRelay => relay_cost(*id).map(i64::from),
                    Role::Sink => None,
                }
            })
            .collect();
        let q = Query { source: s, k, h: h_max.min(63) as usize, cost: &cost };
        let walks = self.branch_and_bound(&q)?;
        let mut paths: Vec<Vec<NodeId>> = walks
            .into_iter()
            .map(|w| {
                let mut p = vec![source];
                p.extend(w.into_iter().map(|i| self.ids[i]));
                p.push(self.ids[t]);
                p
            })
            .collect();
        paths.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        Some(paths)
    }

    fn branch_and_bound(&self, q: &Query) -> Option<Vec<Vec<usize>>> {
        let full: u64 = if q.h <= 1 { 0 } else { ((1u64 << (q.h - 1)) - 1) << 1 };
        let mut stack = vec![vec![full; self.ids.len()]];
        let mut best: Option<(i64, Vec<Vec<usize>>)> = None;
        let mut solved = 0;
        while let Some(masks) = stack.pop() {
            if solved >= BRANCH_BUDGET {
                break;
            }
            solved += 1;
            let Some(relaxed) = self.relax(q, &masks) else {
                continue;
            };
            if best.as_ref().is_some_and(|(c, _)| relaxed.cost >= *c) {
                continue;
            }
            let walks: Vec<Vec<usize>> =
                relaxed.walks.iter().map(|w| shortcut(&w.iter().map(|&(v, _)| v).collect::<Vec<_>>())).collect();
            match first_conflict(&walks) {
                None => {
                    let c = self.true_cost(q, &walks);
                    if best.as_ref().is_none_or(|(b, _)| c < *b) {
                        best = Some((c, walks));
                    }
                }
                Some(v) => {
                    let layers: u64 = relaxed
                        .walks
                        .iter()
                        .flatten()
                        .filter(|&&(u, _)| u == v)
                        .fold(0, |m, &(_, l)| m | (1u64 << l));
                    // Pushed in reverse so the first layer is explored first.
                    let mut rest = masks.clone();
                    rest[v] &= !layers;
                    stack.push(rest);
                    for l in (0..64).rev().filter(|l| layers & (1u64 << l) != 0) {
                        let mut m = masks.clone();
                        m[v] &= 1u64 << l;
                        stack.push(m);
                    }
                }
            }
        }
        best.map(|(_, w)| w)
    }

    fn true_cost(&self, q: &Query, walks: &[Vec<usize>]) -> i64 {
        let relays: BTreeSet<usize> = walks.iter().flatten().copied().collect();
        let hops: usize = walks.iter().map(|w| w.len() + 1).sum();
        relays.iter().map(|&v| q.cost[v].unwrap_or(0) * RELAY_WEIGHT).sum::<i64>() + hops as i64
    }

    /// Min-cost flow on the layered network with per-node layer masks.
    fn relax(&self, q: &Query, masks: &[u64]) -> Option<Relaxed> {
        let n = self.ids.len();
        let t = self.sink?;
        let layers = q.h.saturating_sub(1);
        // 0 = source, 1 = super-sink, then in/out pairs per (node, layer).
        let vin = |v: usize, l: usize| 2 + 2 * (v * layers + (l - 1));
        let mut net = FlowNet::new(2 + 2 * n * layers);
        let usable = |v: usize, l: usize| q.cost[v].is_some() && masks[v] & (1u64 << l) != 0;
        let mut split_arcs = Vec::new();
        for v in 0..n {
            for l in 1..=layers {
                if usable(v, l) {
                    let id = net.add_arc(vin(v, l), vin(v, l) + 1, 1, q.cost[v].unwrap_or(0) * RELAY_WEIGHT);
                    split_arcs.push((id, v, l));
                }
            }
        }
        for &v in &self.adj[q.source] {
            if v == t {
                net.add_arc(0, 1, 1, 1);
            } else if layers >= 1 && usable(v, 1) {
                net.add_arc(0, vin(v, 1), 1, 1);
            }
        }
        for u in 0..n {
            for l in 1..=layers {
                if !usable(u, l) {
                    continue;
                }
                let out = vin(u, l) + 1;
                for &v in &self.adj[u] {
                    if v == t {
                        net.add_arc(out, 1, 1, 1);
                    } else if l < layers && usable(v, l + 1) {
                        net.add_arc(out, vin(v, l + 1), 1, 1);
                    }
                }
            }
        }
        let (sent, cost) = net.min_cost_flow(0, 1, q.k as i32);
        if (sent as usize) < q.k {
            return None;
        }
        let layer_of: BTreeMap<usize, (usize, usize)> =
            split_arcs.iter().map(|&(_, v, l)| (vin(v, l), (v, l))).collect();
        let walks = net
            .decompose(0, 1)
            .into_iter()
            .map(|p| p.iter().filter_map(|x| layer_of.get(x).copied()).collect())
            .collect();
        Some(Relaxed { cost, walks })
    }
}

/// Removes loops so each node appears at most once.
fn shortcut(walk: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(walk.len());
    for &v in walk {
        if let Some(pos) = out.iter().position(|&u| u == v) {
            out.truncate(pos + 1);
        } else {
            out.push(v);
        }
    }
    out
}

/// Smallest node index shared by two different walks.
fn first_conflict(walks: &[Vec<usize>]) -> Option<usize> {
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    let mut shared = BTreeSet::new();
    for (i, w) in walks.iter().enumerate() {
        for &v in w {
            if let Some(&o) = owner.get(&v) {
                if o != i {
                    shared.insert(v);
                }
            } else {
                owner.insert(v, i);
            }
        }
    }
    shared.first().copied()
}

/// One-shot form of [`PathSearch::solve`] with an explicit cost map;
/// relays missing from `relay_cost` cost 1.
pub fn hop_bounded_disjoint_paths(
    g: &NetworkGraph,
    source: NodeId,
    k: usize,
    h_max: u32,
    relay_cost: &BTreeMap<NodeId, u32>,
    forbidden: &BTreeSet<NodeId>,
) -> Option<Vec<Vec<NodeId>>> {
    PathSearch::new(g).solve(source, k, h_max, |v| Some(relay_cost.get(&v).copied().unwrap_or(1)), forbidden)
}
