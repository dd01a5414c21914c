//! Minimum-relay, hop-constrained, k-connected topology design.
//!
//! The designer works on a [`NetworkGraph`] whose edges are either modeled
//! (length ≤ `R_max`) or learnt on the field. It extracts a [`Design`]: a
//! set of relays and, for every source, `k` node-disjoint routes of at most
//! `h_max` hops to the sink.

mod design;
mod flow;
mod paths;
mod validate;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::linkmodel::LinkModel;
use crate::scenario::{DeploymentScenario, NodeId, Role};

pub use design::{
    augment, evaluate_learnt, extract_design, extract_design_report, extract_design_with, AugmentResult, DesignOptions,
    DesignReport,
};
pub use paths::{hop_bounded_disjoint_paths, PathSearch};
pub use validate::{validate_design, DesignViolation, ValidateOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Modeled,
    LearntGood,
    LearntBad,
}

impl Provenance {
    pub fn is_learnt(self) -> bool {
        !matches!(self, Provenance::Modeled)
    }

    pub fn is_traversable(self) -> bool {
        !matches!(self, Provenance::LearntBad)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: NodeId,
    pub x_m: f64,
    pub y_m: f64,
    pub role: Role,
    pub deployed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_out_hat: Option<f64>,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GraphRepr {
    nodes: Vec<GraphNode>,
    edges: Vec<Edge>,
}

/// Nodes plus at most one edge record per unordered pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraphRepr", from = "GraphRepr")]
pub struct NetworkGraph {
    nodes: Vec<GraphNode>,
    edges: BTreeMap<(NodeId, NodeId), Edge>,
}

impl From<NetworkGraph> for GraphRepr {
    fn from(g: NetworkGraph) -> Self {
        GraphRepr { nodes: g.nodes, edges: g.edges.into_values().collect() }
    }
}

impl From<GraphRepr> for NetworkGraph {
    fn from(r: GraphRepr) -> Self {
        let mut g = NetworkGraph { nodes: r.nodes, edges: BTreeMap::new() };
        for e in r.edges {
            g.set_edge(e.a, e.b, e.provenance, e.p_out_hat);
        }
        g
    }
}

impl NetworkGraph {
    pub fn new(mut nodes: Vec<GraphNode>) -> Self {
        nodes.sort_by_key(|n| n.id);
        NetworkGraph { nodes, edges: BTreeMap::new() }
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&GraphNode> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.nodes[i])
    }

    pub fn sink(&self) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.role == Role::Sink).map(|n| n.id)
    }

    pub fn sources(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.role == Role::Source).map(|n| n.id).collect()
    }

    pub fn potential_relays(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.role == Role::PotentialRelay).map(|n| n.id).collect()
    }

    pub fn deployed(&self) -> BTreeSet<NodeId> {
        self.nodes.iter().filter(|n| n.deployed).map(|n| n.id).collect()
    }

    pub fn set_deployed(&mut self, ids: &BTreeSet<NodeId>) {
        for n in &mut self.nodes {
            n.deployed = ids.contains(&n.id);
        }
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        Some((na.x_m - nb.x_m).hypot(na.y_m - nb.y_m))
    }

    pub fn edge(&self, a: NodeId, b: NodeId) -> Option<&Edge> {
        self.edges.get(&key(a, b))
    }

    /// Inserts or updates the record for `{a, b}`. A learnt record is never
    /// replaced by a modeled one.
    pub fn set_edge(&mut self, a: NodeId, b: NodeId, provenance: Provenance, p_out_hat: Option<f64>) {
        if a == b {
            return;
        }
        let k = key(a, b);
        if let Some(existing) = self.edges.get(&k) {
            if existing.provenance.is_learnt() && !provenance.is_learnt() {
                return;
            }
        }
        self.edges.insert(k, Edge { a: k.0, b: k.1, provenance, p_out_hat });
    }

    pub fn remove_edge(&mut self, a: NodeId, b: NodeId) {
        self.edges.remove(&key(a, b));
    }

    pub fn is_traversable(&self, a: NodeId, b: NodeId) -> bool {
        self.edge(a, b).is_some_and(|e| e.provenance.is_traversable())
    }

    /// Traversable neighbours of every node, sorted by id.
    pub fn adjacency(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for e in self.edges.values().filter(|e| e.provenance.is_traversable()) {
            adj.entry(e.a).or_default().push(e.b);
            adj.entry(e.b).or_default().push(e.a);
        }
        for v in adj.values_mut() {
            v.sort();
        }
        adj
    }

    /// Learnt-good edges whose endpoints are both deployed.
    pub fn learnt_view(&self, deployed: &BTreeSet<NodeId>) -> NetworkGraph {
        let mut g = NetworkGraph { nodes: self.nodes.clone(), edges: BTreeMap::new() };
        for e in self.edges.values() {
            if e.provenance == Provenance::LearntGood && deployed.contains(&e.a) && deployed.contains(&e.b) {
                g.edges.insert((e.a, e.b), *e);
            }
        }
        g
    }

    /// Learnt edges among deployed pairs plus modeled edges touching at
    /// least one undeployed node. Learnt-bad edges stay in the record but
    /// are not traversable.
    pub fn hybrid_view(&self, deployed: &BTreeSet<NodeId>) -> NetworkGraph {
        let mut g = NetworkGraph { nodes: self.nodes.clone(), edges: BTreeMap::new() };
        for e in self.edges.values() {
            let both = deployed.contains(&e.a) && deployed.contains(&e.b);
            if e.provenance.is_learnt() || !both {
                g.edges.insert((e.a, e.b), *e);
            }
        }
        g
    }

    /// Modeled edges only, discarding every measurement.
    pub fn model_view(&self, r_max_m: f64) -> NetworkGraph {
        let mut g = NetworkGraph { nodes: self.nodes.clone(), edges: BTreeMap::new() };
        add_modeled_edges(&mut g, r_max_m);
        g
    }

    /// Measured outage on a traversable edge (0 for modeled edges).
    pub fn outage(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.edge(a, b).filter(|e| e.provenance.is_traversable()).map(|e| e.p_out_hat.unwrap_or(0.0))
    }
}

fn add_modeled_edges(g: &mut NetworkGraph, r_max_m: f64) {
    let nodes = g.nodes.clone();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if (a.x_m - b.x_m).hypot(a.y_m - b.y_m) <= r_max_m {
                g.set_edge(a.id, b.id, Provenance::Modeled, None);
            }
        }
    }
}

/// Graph over every location with a modeled edge between each pair at
/// distance ≤ `R_max`.
pub fn build_model_graph(scenario: &DeploymentScenario, model: &LinkModel) -> NetworkGraph {
    let nodes = scenario
        .nodes
        .iter()
        .map(|n| GraphNode { id: n.id, x_m: n.x_m, y_m: n.y_m, role: n.role, deployed: false })
        .collect();
    let mut g = NetworkGraph::new(nodes);
    add_modeled_edges(&mut g, model.r_max_m);
    g
}

/// Selected relays and `k` node-disjoint routes per source.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    pub relays_used: BTreeSet<NodeId>,
    /// Each route is a node sequence from the source to the sink.
    pub routes: BTreeMap<NodeId, Vec<Vec<NodeId>>>,
    pub h_max: u32,
}

impl Design {
    pub fn relay_count(&self) -> usize {
        self.relays_used.len()
    }

    /// Number of routes passing through each node as an intermediate hop.
    pub fn traversal_counts(&self) -> BTreeMap<NodeId, usize> {
        let mut counts = BTreeMap::new();
        for paths in self.routes.values() {
            for p in paths {
                for v in &p[1..p.len().saturating_sub(1)] {
                    *counts.entry(*v).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    pub fn max_hops(&self) -> usize {
        self.routes.values().flatten().map(|p| p.len().saturating_sub(1)).max().unwrap_or(0)
    }
}

/// Why no design could be extracted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Infeasible {
    pub source: Option<NodeId>,
    pub reason: String,
}

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.source {
            Some(s) => write!(f, "infeasible at source {s}: {}", self.reason),
            None => write!(f, "infeasible: {}", self.reason),
        }
    }
}

impl std::error::Error for Infeasible {}
