//! Exhaustive reference solver for small relay-placement instances.
//!
//! Enumerates every simple hop-bounded path per source, then every relay
//! subset in increasing size. Exponential, only meant for about a dozen
//! candidate relays.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use relaynet_core::scenario::{NodeId, Role};
use relaynet_core::topology::NetworkGraph;

pub struct Instance {
    ids: Vec<NodeId>,
    roles: Vec<Role>,
    adj: Vec<Vec<usize>>,
}

impl Instance {
    /// `edges` lists the usable links; nothing else about the graph's edge
    /// records is consulted.
    pub fn new(g: &NetworkGraph, edges: &[(NodeId, NodeId)]) -> Self {
        let ids: Vec<NodeId> = g.nodes().iter().map(|n| n.id).collect();
        let roles = g.nodes().iter().map(|n| n.role).collect();
        let pos: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let mut adj = vec![Vec::new(); ids.len()];
        for (a, b) in edges {
            let (i, j) = (pos[a], pos[b]);
            if !adj[i].contains(&j) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        assert!(ids.len() <= 64);
        Instance { ids, roles, adj }
    }

    fn sink(&self) -> usize {
        self.roles.iter().position(|r| *r == Role::Sink).unwrap()
    }

    /// Intermediate masks of every simple path from `s` to the sink with at
    /// most `h` hops.
    fn path_masks(&self, s: usize, h: usize) -> Vec<u64> {
        let t = self.sink();
        let mut out = Vec::new();
        let mut stack = vec![(s, 1u64 << s, 0u64, 0usize)];
        while let Some((u, visited, inner, hops)) = stack.pop() {
            if hops == h {
                continue;
            }
            for &v in &self.adj[u] {
                if v == t {
                    out.push(inner);
                } else if visited & (1 << v) == 0 && self.roles[v] != Role::Sink {
                    stack.push((v, visited | (1 << v), inner | (1 << v), hops + 1));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Minimal intermediate masks of `k` pairwise-disjoint paths.
    fn witness_masks(&self, s: usize, k: usize, h: usize) -> Vec<u64> {
        let paths = self.path_masks(s, h);
        let mut combos: Vec<u64> = Vec::new();
        fn rec(paths: &[u64], start: usize, k: usize, used: u64, out: &mut Vec<u64>) {
            if k == 0 {
                out.push(used);
                return;
            }
            for i in start..paths.len() {
                if paths[i] & used == 0 {
                    rec(paths, i + 1, k - 1, used | paths[i], out);
                }
            }
        }
        rec(&paths, 0, k, 0, &mut combos);
        // Paths are deduplicated by mask, so the direct link pairs with nothing but relayed paths.
        combos.sort_unstable();
        combos.dedup();
        let mut minimal: Vec<u64> = Vec::new();
        combos.sort_by_key(|m| m.count_ones());
        for m in combos {
            if !minimal.iter().any(|x| x & m == *x) {
                minimal.push(m);
            }
        }
        minimal
    }

    /// Smallest number of relays, drawn from `candidates` and added to
    /// `free`, that gives every source `k` disjoint paths of at most `h` hops.
    pub fn min_relays(&self, k: usize, h: usize, candidates: &BTreeSet<NodeId>, free: &BTreeSet<NodeId>) -> Option<usize> {
        let idx = |v: &NodeId| self.ids.iter().position(|x| x == v).unwrap();
        let mut base = 0u64;
        for (i, r) in self.roles.iter().enumerate() {
            if *r == Role::Source {
                base |= 1 << i;
            }
        }
        for v in free {
            base |= 1 << idx(v);
        }
        let cand: Vec<usize> = candidates.iter().filter(|v| !free.contains(v)).map(idx).collect();
        let sources: Vec<usize> = (0..self.ids.len()).filter(|&i| self.roles[i] == Role::Source).collect();
        let witnesses: Vec<Vec<u64>> = sources.iter().map(|&s| self.witness_masks(s, k, h)).collect();
        let mut best: Option<usize> = None;
        for subset in 0u64..(1 << cand.len()) {
            let size = subset.count_ones() as usize;
            if best.is_some_and(|b| size >= b) {
                continue;
            }
            let mut allowed = base;
            for (j, &c) in cand.iter().enumerate() {
                if subset & (1 << j) != 0 {
                    allowed |= 1 << c;
                }
            }
            if witnesses.iter().all(|ws| ws.iter().any(|w| w & !allowed == 0)) {
                best = Some(size);
            }
        }
        best
    }
}

/// All traversable links of `g` (modeled or learnt good).
pub fn traversable_edges(g: &NetworkGraph) -> Vec<(NodeId, NodeId)> {
    use relaynet_core::topology::Provenance;
    g.edges().filter(|e| e.provenance != Provenance::LearntBad).map(|e| (e.a, e.b)).collect()
}
