//! Independent checks of a [`Design`] against a graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Design, NetworkGraph};
use crate::scenario::{NodeId, Role};

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum DesignViolation {
    #[error("graph has no sink")]
    NoSink,
    #[error("source {0} has {1} routes, expected {2}")]
    RouteCount(NodeId, usize, usize),
    #[error("route key {0} is not a source")]
    NotASource(NodeId),
    #[error("route of {0} does not run from the source to the sink")]
    Endpoints(NodeId),
    #[error("route of {0} has {1} hops, bound is {2}")]
    TooLong(NodeId, usize, u32),
    #[error("route of {0} repeats node {1}")]
    Repeats(NodeId, NodeId),
    #[error("route of {0} uses missing or bad link {1}-{2}")]
    NotTraversable(NodeId, NodeId, NodeId),
    #[error("routes of {0} share intermediate {1}")]
    NotDisjoint(NodeId, NodeId),
    #[error("intermediate {1} on a route of {0} is neither a used relay nor a source")]
    UnlistedRelay(NodeId, NodeId),
    #[error("relay {0} is listed but unused")]
    UnusedRelay(NodeId),
    #[error("relay {0} is not a potential relay location")]
    NotARelay(NodeId),
}

#[derive(Clone, Debug)]
pub struct ValidateOptions {
    /// Require a route set for every source of the graph.
    pub all_sources: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { all_sources: true }
    }
}

pub fn validate_design(
    g: &NetworkGraph,
    design: &Design,
    k: usize,
    opts: &ValidateOptions,
) -> Result<(), DesignViolation> {
    let sink = g.sink().ok_or(DesignViolation::NoSink)?;
    let role = |v: NodeId| g.node(v).map(|n| n.role);

    if opts.all_sources {
        for s in g.sources() {
            if !design.routes.contains_key(&s) {
                return Err(DesignViolation::RouteCount(s, 0, k));
            }
        }
    }
    let mut seen_relays = BTreeSet::new();
    for (&s, paths) in &design.routes {
        if role(s) != Some(Role::Source) {
            return Err(DesignViolation::NotASource(s));
        }
        if paths.len() != k {
            return Err(DesignViolation::RouteCount(s, paths.len(), k));
        }
        for p in paths {
            if p.len() < 2 || p[0] != s || p[p.len() - 1] != sink {
                return Err(DesignViolation::Endpoints(s));
            }
            if p.len() - 1 > design.h_max as usize {
                return Err(DesignViolation::TooLong(s, p.len() - 1, design.h_max));
            }
            let mut on_path = BTreeSet::new();
            for &v in p {
                if !on_path.insert(v) {
                    return Err(DesignViolation::Repeats(s, v));
                }
            }
            for w in p.windows(2) {
                if !g.is_traversable(w[0], w[1]) {
                    return Err(DesignViolation::NotTraversable(s, w[0], w[1]));
                }
            }
            for &v in &p[1..p.len() - 1] {
                match role(v) {
                    Some(Role::Source) => {}
                    Some(Role::PotentialRelay) if design.relays_used.contains(&v) => {
                        seen_relays.insert(v);
                    }
                    _ => return Err(DesignViolation::UnlistedRelay(s, v)),
                }
            }
        }
        for (i, a) in paths.iter().enumerate() {
            for b in &paths[i + 1..] {
                let inner_b: BTreeSet<NodeId> = b[1..b.len() - 1].iter().copied().collect();
                if let Some(v) = a[1..a.len() - 1].iter().find(|v| inner_b.contains(v)) {
                    return Err(DesignViolation::NotDisjoint(s, *v));
                }
            }
        }
    }
    for &r in &design.relays_used {
        if role(r) != Some(Role::PotentialRelay) {
            return Err(DesignViolation::NotARelay(r));
        }
        if !seen_relays.contains(&r) {
            return Err(DesignViolation::UnusedRelay(r));
        }
    }
    Ok(())
}
