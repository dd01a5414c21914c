//! Temporal robustness runs: a design is left in a drifting field and
//! redesigned whenever its predicted delivery falls below a trigger.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CampaignMode, DesignerError, SessionState, SimulatedField};
use crate::fieldsim::{ChannelParams, GroundTruthChannel};
use crate::linkmodel::LinkModel;
use crate::scenario::{DeploymentScenario, NodeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub k: u32,
    pub n_cycles: u32,
    pub trigger_pdel: f64,
    pub cycle_gap_hours: f64,
    pub campaign_packets: u64,
    pub channel: ChannelParams,
    pub link_model: LinkModel,
}

impl RobustnessConfig {
    pub fn new(k: u32, channel: ChannelParams, link_model: LinkModel) -> Self {
        RobustnessConfig {
            k,
            n_cycles: 40,
            trigger_pdel: 0.73,
            cycle_gap_hours: 4.0,
            campaign_packets: 5000,
            channel,
            link_model,
        }
    }
}

/// One row of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSetResult {
    pub sources: Vec<NodeId>,
    pub initial_relays: BTreeSet<NodeId>,
    /// Cycles (from 2 on) whose redesign needed new relays.
    pub augmentation_cycles: Vec<u32>,
    pub final_relays: BTreeSet<NodeId>,
    pub redesign_count: u32,
    /// Cycles at which a redesign found no feasible topology.
    #[serde(default)]
    pub failed_cycles: Vec<u32>,
    /// Set when even the first design could not be made feasible.
    #[serde(default)]
    pub infeasible: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub k: u32,
    pub n_cycles: u32,
    pub trigger_pdel: f64,
    pub seed: u64,
    pub rows: Vec<SourceSetResult>,
}

fn ids(set: &BTreeSet<NodeId>) -> String {
    if set.is_empty() {
        return "-".into();
    }
    set.iter().map(|v| v.0.to_string()).collect::<Vec<_>>().join(",")
}

impl RobustnessReport {
    pub fn total_redesigns(&self) -> u32 {
        self.rows.iter().map(|r| r.redesign_count).sum()
    }

    /// Source sets that were designed and never needed another relay.
    pub fn zero_augmentation_sets(&self) -> usize {
        self.rows.iter().filter(|r| r.infeasible.is_none() && r.augmentation_cycles.is_empty()).count()
    }

    /// Plain-text table with one line per source set.
    pub fn to_table(&self) -> String {
        let header = ["sources", "initial relay set", "augmentation cycles", "final relay set", "redesign count"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                let cycles = if r.augmentation_cycles.is_empty() {
                    "-".to_string()
                } else {
                    r.augmentation_cycles.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
                };
                [
                    r.sources.iter().map(|v| v.0.to_string()).collect::<Vec<_>>().join(","),
                    ids(&r.initial_relays),
                    cycles,
                    ids(&r.final_relays),
                    match &r.infeasible {
                        Some(_) => "infeasible".into(),
                        None => r.redesign_count.to_string(),
                    },
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &body {
            for (w, cell) in width.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells.iter().zip(width).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
        };
        line(&mut out, &header);
        let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for row in &body {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let _ = writeln!(out, "k = {}, cycles = {}, total redesigns = {}", self.k, self.n_cycles, self.total_redesigns());
        out
    }
}

/// True when the predicted delivery calls for a redesign: any route below
/// the trigger for single-route designs, every route of some source for
/// multi-route ones.
pub fn needs_redesign(route_pdel: &BTreeMap<NodeId, Vec<f64>>, k: u32, trigger: f64) -> bool {
    route_pdel.values().any(|routes| {
        if k <= 1 {
            routes.iter().any(|&p| p < trigger)
        } else {
            routes.iter().all(|&p| p < trigger)
        }
    })
}

fn run_source_set(
    scenario: &DeploymentScenario,
    sources: &[NodeId],
    cfg: &RobustnessConfig,
    seed: u64,
) -> Result<SourceSetResult, DesignerError> {
    let mut s = scenario
        .with_sources(sources)
        .map_err(|e| DesignerError::Precondition(e.to_string()))?;
    s.qos.k = cfg.k;
    let channel = GroundTruthChannel::new(cfg.channel.clone().with_seed(seed), s.positions())
        .map_err(|e| DesignerError::Precondition(e.to_string()))?;
    let mut field = SimulatedField::new(channel, cfg.campaign_packets, cfg.link_model.rssi_min_dbm, CampaignMode::Counts);
    let mut session = SessionState::new(s, cfg.link_model)?;
    let mut row = SourceSetResult {
        sources: sources.to_vec(),
        initial_relays: BTreeSet::new(),
        augmentation_cycles: Vec::new(),
        final_relays: BTreeSet::new(),
        redesign_count: 0,
        failed_cycles: Vec::new(),
        infeasible: None,
    };
    let relays_of = |sess: &SessionState| -> BTreeSet<NodeId> {
        let relays: BTreeSet<NodeId> = sess.scenario.potential_relays().into_iter().collect();
        sess.deployed.intersection(&relays).copied().collect()
    };
    match session.iterate_until_feasible(&mut field, None) {
        Ok(_) => {}
        Err(DesignerError::Infeasible(e)) => {
            row.infeasible = Some(e.to_string());
            return Ok(row);
        }
        Err(DesignerError::IterationLimit(n)) => {
            row.infeasible = Some(format!("no feasible design after {n} iterations"));
            return Ok(row);
        }
        Err(e) => return Err(e),
    }
    row.initial_relays = relays_of(&session);
    for cycle in 2..=cfg.n_cycles {
        field.channel.advance_cycles(1, cfg.cycle_gap_hours);
        session.learn_links(&mut field)?;
        let Some(design) = session.current_design.clone() else { break };
        let routes = session.predicted_route_pdel(&design);
        if !needs_redesign(&routes, cfg.k, cfg.trigger_pdel) {
            continue;
        }
        row.redesign_count += 1;
        let best: BTreeMap<NodeId, f64> =
            routes.iter().map(|(s, v)| (*s, v.iter().copied().fold(0.0, f64::max))).collect();
        let before = session.deployed.clone();
        match session.repair(&mut field, &best, None) {
            Ok(_) => {}
            Err(DesignerError::Infeasible(_)) | Err(DesignerError::IterationLimit(_)) => row.failed_cycles.push(cycle),
            Err(DesignerError::NoDegradation) => {}
            Err(e) => return Err(e),
        }
        if session.deployed.len() > before.len() {
            row.augmentation_cycles.push(cycle);
        }
    }
    row.final_relays = relays_of(&session);
    Ok(row)
}

/// Runs every source set against a field started from the same seed.
pub fn robustness_experiment(
    scenario: &DeploymentScenario,
    source_sets: &[Vec<NodeId>],
    cfg: &RobustnessConfig,
    seed: u64,
) -> Result<RobustnessReport, DesignerError> {
    let rows = source_sets
        .iter()
        .map(|set| run_source_set(scenario, set, cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RobustnessReport { k: cfg.k, n_cycles: cfg.n_cycles, trigger_pdel: cfg.trigger_pdel, seed, rows })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    fn routes(v: &[(u32, &[f64])]) -> BTreeMap<NodeId, Vec<f64>> {
        v.iter().map(|(s, r)| (NodeId(*s), r.to_vec())).collect()
    }

    #[test]
    fn trigger_rules() {
        let one_bad = routes(&[(1, &[0.9, 0.5]), (2, &[0.9, 0.9])]);
        assert!(needs_redesign(&one_bad, 1, 0.73));
        assert!(!needs_redesign(&one_bad, 2, 0.73));
        let both_bad = routes(&[(1, &[0.7, 0.5]), (2, &[0.9, 0.9])]);
        assert!(needs_redesign(&both_bad, 2, 0.73));
        assert!(!needs_redesign(&routes(&[(1, &[0.73])]), 1, 0.73));
    }

    #[test]
    fn no_drift_no_redesign() {
        let s = indoor24(&[]);
        let sets = indoor24_source_sets();
        let mut ch = model_matching_channel(8.0, 4);
        ch.drift_sigma_db = 0.0;
        let mut cfg = RobustnessConfig::new(1, ch, model_r(8.0));
        cfg.n_cycles = 10;
        let r = robustness_experiment(&s, &sets[..3], &cfg, 4).unwrap();
        assert_eq!(r.total_redesigns(), 0);
        for row in &r.rows {
            assert!(row.infeasible.is_none());
            assert_eq!(row.initial_relays, row.final_relays);
        }
    }

    #[test]
    fn report_table_and_json() {
        let s = indoor24(&[]);
        let sets = indoor24_source_sets();
        let mut cfg = RobustnessConfig::new(1, model_matching_channel(8.0, 2), model_r(8.0));
        cfg.n_cycles = 3;
        let r = robustness_experiment(&s, &sets[..2], &cfg, 2).unwrap();
        let table = r.to_table();
        let head = table.lines().next().unwrap();
        for col in ["initial relay set", "augmentation cycles", "final relay set", "redesign count"] {
            assert!(head.contains(col), "{head}");
        }
        assert_eq!(table.lines().count(), 2 + 2 + 1);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["initial_relays", "augmentation_cycles", "final_relays", "redesign_count"] {
            assert!(json["rows"][0].get(key).is_some());
        }
        let back: RobustnessReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }
}
