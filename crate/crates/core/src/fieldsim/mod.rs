//! Simulated ground-truth radio field: hello campaigns, slow drift and
//! packet-level MAC simulation.

mod channel;
mod mac;

use thiserror::Error;

use crate::scenario::NodeId;

pub use channel::{calibration_layout, CalibrationSpec, ChannelParams, ChannelPreset, GroundTruthChannel, OutageCount};
pub use mac::{lambda_max, run_mac_sim, DeliveryLog, DeliveryWindow, MacSimConfig, SourceLog, DEFAULT_WINDOW_PACKETS};

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("nodes {0} and {1} are at the same position")]
    ZeroDistance(NodeId, NodeId),
    #[error("no channel state for pair {0}-{1}")]
    UnknownPair(NodeId, NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("a campaign needs at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error(transparent)]
    LinkModel(#[from] crate::linkmodel::LinkModelError),
}
