//! Greedy relay selection followed by combinatorial pruning.

use std::collections::{BTreeMap, BTreeSet};

use super::paths::PathSearch;
use super::{Design, Infeasible, NetworkGraph};
use crate::scenario::NodeId;

#[derive(Clone, Debug, Default)]
pub struct DesignOptions {
    /// Relays that cost nothing and are never pruned (already on the field).
    pub free_relays: BTreeSet<NodeId>,
    /// When set, the only relays that may be used.
    pub allowed_relays: Option<BTreeSet<NodeId>>,
}

/// Design on every traversable edge of `g` with all potential relays available.
pub fn extract_design(g: &NetworkGraph, h_max: u32, k: usize) -> Result<Design, Infeasible> {
    extract_design_with(g, h_max, k, &DesignOptions::default())
}

fn relays_of(routes: &BTreeMap<NodeId, Vec<Vec<NodeId>>>, relays: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
    routes
        .values()
        .flatten()
        .flat_map(|p| p[1..p.len() - 1].iter().copied())
        .filter(|v| relays.contains(v))
        .collect()
}

pub fn extract_design_with(
    g: &NetworkGraph,
    h_max: u32,
    k: usize,
    opts: &DesignOptions,
) -> Result<Design, Infeasible> {
    extract_design_report(g, h_max, k, opts).map(|r| r.pruned)
}

/// Both phases of a design run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignReport {
    /// Greedy solution before pruning.
    pub initial: Design,
    pub pruned: Design,
}

pub fn extract_design_report(
    g: &NetworkGraph,
    h_max: u32,
    k: usize,
    opts: &DesignOptions,
) -> Result<DesignReport, Infeasible> {
    let sink = g.sink().ok_or(Infeasible { source: None, reason: "graph has no sink".into() })?;
    let search = PathSearch::new(g);
    let all_relays: BTreeSet<NodeId> = g.potential_relays().into_iter().collect();
    let usable = |v: &NodeId| opts.allowed_relays.as_ref().is_none_or(|a| a.contains(v));
    let free: BTreeSet<NodeId> = opts.free_relays.iter().filter(|v| all_relays.contains(v)).copied().collect();
    let none = BTreeSet::new();

    let mut sources = g.sources();
    let dist = |s: &NodeId| g.distance(*s, sink).unwrap_or(0.0);
    sources.sort_by(|a, b| dist(b).total_cmp(&dist(a)).then(a.cmp(b)));

    let mut selected = free.clone();
    let mut routes = BTreeMap::new();
    for &s in &sources {
        let paths = search
            .solve(
                s,
                k,
                h_max,
                |v| {
                    if !usable(&v) && !free.contains(&v) {
                        None
                    } else if selected.contains(&v) {
                        Some(0)
                    } else {
                        Some(1)
                    }
                },
                &none,
            )
            .ok_or_else(|| Infeasible {
                source: Some(s),
                reason: format!("fewer than {k} node-disjoint paths within {h_max} hops"),
            })?;
        selected.extend(paths.iter().flat_map(|p| p[1..p.len() - 1].iter().copied()).filter(|v| all_relays.contains(v)));
        routes.insert(s, paths);
    }

    let initial = Design { relays_used: relays_of(&routes, &all_relays), routes, h_max };
    let mut design = initial.clone();
    loop {
        let counts = design.traversal_counts();
        let mut order: Vec<NodeId> = design.relays_used.difference(&free).copied().collect();
        order.sort_by_key(|v| (counts.get(v).copied().unwrap_or(0), *v));
        let mut removed = false;
        for r in order {
            if !design.relays_used.contains(&r) {
                continue;
            }
            let keep: BTreeSet<NodeId> = design.relays_used.union(&free).filter(|v| **v != r).copied().collect();
            let mut trial = BTreeMap::new();
            let ok = sources.iter().all(|&s| {
                match search.solve(s, k, h_max, |v| keep.contains(&v).then_some(0), &none) {
                    Some(p) => {
                        trial.insert(s, p);
                        true
                    }
                    None => false,
                }
            });
            if ok {
                design.relays_used = relays_of(&trial, &all_relays);
                design.routes = trial;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    Ok(DesignReport { initial, pruned: design })
}

/// Design on the learnt-good links among deployed nodes, relays restricted
/// to those already deployed.
pub fn evaluate_learnt(
    g: &NetworkGraph,
    deployed: &BTreeSet<NodeId>,
    h_max: u32,
    k: usize,
) -> Result<Design, Infeasible> {
    let view = g.learnt_view(deployed);
    let opts = DesignOptions { free_relays: BTreeSet::new(), allowed_relays: Some(deployed.clone()) };
    extract_design_with(&view, h_max, k, &opts)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentResult {
    pub additional: BTreeSet<NodeId>,
    pub design: Design,
}

/// Design on the hybrid graph with deployed relays free; the new relays
/// it needs are the augmentation.
pub fn augment(
    g_hybrid: &NetworkGraph,
    deployed: &BTreeSet<NodeId>,
    h_max: u32,
    k: usize,
) -> Result<AugmentResult, Infeasible> {
    let view = g_hybrid.hybrid_view(deployed);
    let opts = DesignOptions { free_relays: deployed.clone(), allowed_relays: None };
    let design = extract_design_with(&view, h_max, k, &opts)?;
    let additional = design.relays_used.difference(deployed).copied().collect();
    Ok(AugmentResult { additional, design })
}
