//! Deployment scenarios: node locations with roles plus the QoS target.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linkmodel::LinkModel;
use crate::qosmap::QosSpec;

/// Identifier of a location (source, potential relay or sink).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    PotentialRelay,
    Sink,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub x_m: f64,
    pub y_m: f64,
    pub role: Role,
}

impl Node {
    pub fn new(id: u32, x_m: f64, y_m: f64, role: Role) -> Self {
        Node { id: NodeId(id), x_m, y_m, role }
    }

    pub fn distance_to(&self, other: &Node) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }
}

/// Either a fixed link model or a request to estimate one from a calibration campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkModelSpec {
    Given(LinkModel),
    Keyword(LinkModelKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkModelKeyword {
    Estimate,
}

impl LinkModelSpec {
    pub fn given(&self) -> Option<&LinkModel> {
        match self {
            LinkModelSpec::Given(m) => Some(m),
            LinkModelSpec::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("scenario must have exactly one sink, found {0}")]
    SinkCount(usize),
    #[error("scenario has no sources")]
    NoSources,
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {0} has a non-finite position")]
    BadPosition(NodeId),
    #[error("invalid QoS: {0}")]
    Qos(String),
    #[error("io: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

/// The design problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentScenario {
    pub nodes: Vec<Node>,
    pub qos: QosSpec,
    pub link_model: LinkModelSpec,
}

impl DeploymentScenario {
    pub fn new(nodes: Vec<Node>, qos: QosSpec, link_model: LinkModel) -> Self {
        DeploymentScenario { nodes, qos, link_model: LinkModelSpec::Given(link_model) }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: DeploymentScenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                return Err(ScenarioError::DuplicateId(n.id));
            }
            if !n.x_m.is_finite() || !n.y_m.is_finite() {
                return Err(ScenarioError::BadPosition(n.id));
            }
        }
        let sinks = self.nodes.iter().filter(|n| n.role == Role::Sink).count();
        if sinks != 1 {
            return Err(ScenarioError::SinkCount(sinks));
        }
        if !self.nodes.iter().any(|n| n.role == Role::Source) {
            return Err(ScenarioError::NoSources);
        }
        self.qos.validate().map_err(|e| ScenarioError::Qos(e.to_string()))?;
        Ok(())
    }

    pub fn sink(&self) -> NodeId {
        self.nodes
            .iter()
            .find(|n| n.role == Role::Sink)
            .map(|n| n.id)
            .expect("validated scenario has a sink")
    }

    pub fn sources(&self) -> Vec<NodeId> {
        self.ids_with(Role::Source)
    }

    pub fn potential_relays(&self) -> Vec<NodeId> {
        self.ids_with(Role::PotentialRelay)
    }

    fn ids_with(&self, role: Role) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.nodes.iter().filter(|n| n.role == role).map(|n| n.id).collect();
        v.sort();
        v
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn positions(&self) -> BTreeMap<NodeId, (f64, f64)> {
        self.nodes.iter().map(|n| (n.id, (n.x_m, n.y_m))).collect()
    }

    /// Returns a copy where exactly `sources` are sources and every other
    /// non-sink location is a potential relay.
    pub fn with_sources(&self, sources: &[NodeId]) -> Result<Self, ScenarioError> {
        for s in sources {
            if self.node(*s).is_none() {
                return Err(ScenarioError::UnknownNode(*s));
            }
        }
        let mut out = self.clone();
        for n in &mut out.nodes {
            if n.role == Role::Sink {
                continue;
            }
            n.role = if sources.contains(&n.id) { Role::Source } else { Role::PotentialRelay };
        }
        out.validate()?;
        Ok(out)
    }
}
