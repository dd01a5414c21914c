//! Sources of link measurements for the learning step.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::fieldsim::GroundTruthChannel;
use crate::linkmodel::estimate_all_links;
use crate::scenario::NodeId;

/// Outage estimate of one directed link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkObservation {
    pub tx_id: NodeId,
    pub rx_id: NodeId,
    pub p_out_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("campaign failed: {0}")]
pub struct CampaignError(pub String);

/// Anything that can measure the links among a set of deployed nodes.
pub trait CampaignProvider {
    fn campaign(&mut self, deployed: &BTreeSet<NodeId>) -> Result<Vec<LinkObservation>, CampaignError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignMode {
    /// Full RSSI trace pushed through the link estimator.
    Trace,
    /// Binomial good-packet counts per link.
    Counts,
}

/// A simulated field answering campaigns from a [`GroundTruthChannel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulatedField {
    pub channel: GroundTruthChannel,
    pub n_packets: u64,
    pub rssi_min_dbm: f64,
    pub mode: CampaignMode,
}

impl SimulatedField {
    pub fn new(channel: GroundTruthChannel, n_packets: u64, rssi_min_dbm: f64, mode: CampaignMode) -> Self {
        SimulatedField { channel, n_packets, rssi_min_dbm, mode }
    }
}

impl CampaignProvider for SimulatedField {
    fn campaign(&mut self, deployed: &BTreeSet<NodeId>) -> Result<Vec<LinkObservation>, CampaignError> {
        let err = |e: &dyn std::fmt::Display| CampaignError(e.to_string());
        match self.mode {
            CampaignMode::Counts => Ok(self
                .channel
                .outage_campaign(deployed, self.n_packets, self.rssi_min_dbm)
                .map_err(|e| err(&e))?
                .into_iter()
                .map(|c| LinkObservation { tx_id: c.tx_id, rx_id: c.rx_id, p_out_hat: c.p_out_hat() })
                .collect()),
            CampaignMode::Trace => {
                let t_ms = self.channel.elapsed_hours() * 3_600_000.0;
                let trace = self.channel.hello_campaign(deployed, self.n_packets, t_ms).map_err(|e| err(&e))?;
                let meta = self.channel.campaign_meta(deployed, self.n_packets);
                Ok(estimate_all_links(&trace, &meta, self.rssi_min_dbm)
                    .map_err(|e| err(&e))?
                    .into_iter()
                    .map(|s| LinkObservation { tx_id: s.tx_id, rx_id: s.rx_id, p_out_hat: s.p_out_hat })
                    .collect())
            }
        }
    }
}
