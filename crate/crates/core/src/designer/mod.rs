//! The field-interactive design loop: design on the model, deploy, learn
//! the real links, evaluate, augment where needed, keep only what is used,
//! and repair when delivery degrades.

pub mod fixtures;
mod provider;
mod robustness;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linkmodel::{classify_outages, LinkModel, LinkQuality};
use crate::qosmap::{hop_bound, HopBound, MacParams, PathPredictor, QosError, QosSpec};
use crate::scenario::{DeploymentScenario, NodeId, Role};
use crate::topology::{self, build_model_graph, Design, Infeasible, NetworkGraph, Provenance};

pub use provider::{CampaignError, CampaignMode, CampaignProvider, LinkObservation, SimulatedField};
pub use robustness::{robustness_experiment, RobustnessConfig, RobustnessReport, SourceSetResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Designing,
    Operating,
    Repairing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Initial,
    Learn,
    Evaluate,
    Augment,
    UserOverride,
    Repair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub action: Action,
    pub relays_added: BTreeSet<NodeId>,
    pub relays_removed: BTreeSet<NodeId>,
    pub feasible: bool,
    pub per_source_pdel_predicted: BTreeMap<NodeId, f64>,
    /// Deployed nodes with no learnt-good path to the sink after a learn
    /// step; design updates would not reach them. Logged only.
    #[serde(default)]
    pub control_unreachable: BTreeSet<NodeId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DesignerError {
    #[error("operation needs phase {expected:?}, session is {actual:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Infeasible(#[from] Infeasible),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("QoS target cannot be met: {0}")]
    Qos(#[from] QosError),
    #[error("removing relay {0} would break the current design")]
    WouldOrphan(NodeId),
    #[error("unknown relay location {0}")]
    UnknownRelay(NodeId),
    #[error("no delivery degradation to repair")]
    NoDegradation,
    #[error("no feasible design after {0} iterations")]
    IterationLimit(usize),
}

impl DesignerError {
    /// Errors that may clear up by simply trying again.
    pub fn is_retryable(&self) -> bool {
        matches!(self, DesignerError::Campaign(_))
    }
}

/// What [`SessionState::step`] did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepOutcome {
    Designed { feasible: bool },
    Learnt,
    Evaluated { feasible: bool },
    Finalized { removed: BTreeSet<NodeId> },
    Augmented { added: BTreeSet<NodeId> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub scenario: DeploymentScenario,
    pub link_model: LinkModel,
    pub qos: QosSpec,
    pub mac: MacParams,
    pub hop_bound: HopBound,
    pub graph: NetworkGraph,
    pub deployed: BTreeSet<NodeId>,
    pub current_design: Option<Design>,
    pub iteration_log: Vec<IterationRecord>,
    pub phase: Phase,
    /// Set when the last evaluation or augmentation failed.
    #[serde(default)]
    pub infeasible: Option<Infeasible>,
    #[serde(skip)]
    predictor: PredictorCache,
}

/// Lazily built delay table; rebuilt after deserialization.
#[derive(Clone, Debug, Default)]
struct PredictorCache(OnceLock<PathPredictor>);

impl PartialEq for PredictorCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl SessionState {
    pub fn new(scenario: DeploymentScenario, link_model: LinkModel) -> Result<Self, DesignerError> {
        let mac = MacParams::default();
        let qos = scenario.qos;
        let hop_bound = hop_bound(
            link_model.q_max,
            qos.d_max_ms,
            link_model.p_out_target,
            qos.p_del,
            qos.in_time_target,
            &mac,
        )?;
        let graph = build_model_graph(&scenario, &link_model);
        Ok(SessionState {
            scenario,
            link_model,
            qos,
            mac,
            hop_bound,
            graph,
            deployed: BTreeSet::new(),
            current_design: None,
            iteration_log: Vec::new(),
            phase: Phase::Designing,
            infeasible: None,
            predictor: PredictorCache::default(),
        })
    }

    pub fn h_max(&self) -> u32 {
        self.hop_bound.h_max
    }

    pub fn k(&self) -> usize {
        self.qos.k as usize
    }

    fn require(&self, expected: Phase) -> Result<(), DesignerError> {
        if self.phase != expected {
            return Err(DesignerError::WrongPhase { expected, actual: self.phase });
        }
        Ok(())
    }

    fn fixed_nodes(&self) -> BTreeSet<NodeId> {
        self.scenario.nodes.iter().filter(|n| n.role != Role::PotentialRelay).map(|n| n.id).collect()
    }

    fn deploy(&mut self, ids: &BTreeSet<NodeId>) {
        self.deployed.extend(ids.iter().copied());
        self.graph.set_deployed(&self.deployed);
    }

    fn record(
        &mut self,
        action: Action,
        added: BTreeSet<NodeId>,
        removed: BTreeSet<NodeId>,
        feasible: bool,
        design: Option<&Design>,
    ) {
        let predicted = design.map(|d| self.predicted_pdel(d)).unwrap_or_default();
        self.iteration_log.push(IterationRecord {
            index: self.iteration_log.len(),
            action,
            relays_added: added,
            relays_removed: removed,
            feasible,
            per_source_pdel_predicted: predicted,
            control_unreachable: BTreeSet::new(),
        });
    }

    fn control_unreachable(&self) -> BTreeSet<NodeId> {
        let adj = self.graph.learnt_view(&self.deployed).adjacency();
        let sink = self.scenario.sink();
        let mut seen = BTreeSet::from([sink]);
        let mut stack = vec![sink];
        while let Some(v) = stack.pop() {
            for &u in adj.get(&v).into_iter().flatten() {
                if seen.insert(u) {
                    stack.push(u);
                }
            }
        }
        self.deployed.difference(&seen).copied().collect()
    }

    /// Outage used for prediction: the measurement where there is one,
    /// the design target on modeled links.
    fn link_outage(&self, a: NodeId, b: NodeId) -> f64 {
        match self.graph.edge(a, b) {
            Some(e) if e.provenance.is_learnt() => e.p_out_hat.unwrap_or(1.0),
            Some(_) => self.link_model.p_out_target,
            None => 1.0,
        }
    }

    fn predictor(&self) -> &PathPredictor {
        self.predictor.0.get_or_init(|| {
            PathPredictor::new(self.link_model.q_max, self.qos.d_max_ms, &self.mac).expect("validated link model")
        })
    }

    /// Predicted delivery of every route of every source.
    pub fn predicted_route_pdel(&self, design: &Design) -> BTreeMap<NodeId, Vec<f64>> {
        let pred = self.predictor();
        design
            .routes
            .iter()
            .map(|(s, paths)| {
                let per_route = paths
                    .iter()
                    .map(|p| pred.predict(&p.windows(2).map(|w| self.link_outage(w[0], w[1])).collect::<Vec<_>>()))
                    .collect();
                (*s, per_route)
            })
            .collect()
    }

    /// Best-route prediction per source.
    pub fn predicted_pdel(&self, design: &Design) -> BTreeMap<NodeId, f64> {
        self.predicted_route_pdel(design)
            .into_iter()
            .map(|(s, v)| (s, v.into_iter().fold(0.0, f64::max)))
            .collect()
    }

    /// Model-graph design; the suggested relays, sources and sink are deployed.
    pub fn initial_design(&mut self) -> Result<Design, DesignerError> {
        self.require(Phase::Designing)?;
        if !self.deployed.is_empty() || !self.iteration_log.is_empty() {
            return Err(DesignerError::Precondition("initial design already made".into()));
        }
        match topology::extract_design(&self.graph, self.h_max(), self.k()) {
            Ok(d) => {
                let mut ids = self.fixed_nodes();
                ids.extend(d.relays_used.iter().copied());
                self.deploy(&ids);
                self.record(Action::Initial, d.relays_used.clone(), BTreeSet::new(), true, Some(&d));
                self.current_design = Some(d.clone());
                self.infeasible = None;
                Ok(d)
            }
            Err(e) => {
                self.record(Action::Initial, BTreeSet::new(), BTreeSet::new(), false, None);
                self.infeasible = Some(e.clone());
                Err(e.into())
            }
        }
    }

    /// Measures every deployed pair and overwrites those edges with learnt ones.
    pub fn learn_links(&mut self, field: &mut dyn CampaignProvider) -> Result<(), DesignerError> {
        if self.deployed.len() < 2 {
            return Err(DesignerError::Precondition("need at least two deployed nodes".into()));
        }
        let obs = field.campaign(&self.deployed)?;
        let directed: BTreeMap<(NodeId, NodeId), f64> = obs.iter().map(|o| ((o.tx_id, o.rx_id), o.p_out_hat)).collect();
        let ids: Vec<NodeId> = self.deployed.iter().copied().collect();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let fwd = directed.get(&(a, b)).copied().unwrap_or(1.0);
                let rev = directed.get(&(b, a)).copied().unwrap_or(1.0);
                let prov = match classify_outages(fwd, rev, self.link_model.p_out_target) {
                    LinkQuality::Good => Provenance::LearntGood,
                    LinkQuality::Bad => Provenance::LearntBad,
                };
                self.graph.set_edge(a, b, prov, Some(fwd.max(rev)));
            }
        }
        let intact = self.current_design.as_ref().is_some_and(|d| {
            d.routes.values().flatten().all(|p| p.windows(2).all(|w| self.graph.is_traversable(w[0], w[1])))
        });
        let design = self.current_design.clone();
        self.record(Action::Learn, BTreeSet::new(), BTreeSet::new(), intact, design.as_ref());
        let unreachable = self.control_unreachable();
        self.iteration_log.last_mut().expect("just recorded").control_unreachable = unreachable;
        Ok(())
    }

    /// Design restricted to deployed nodes and learnt-good links.
    pub fn evaluate(&mut self) -> Result<Design, DesignerError> {
        match topology::evaluate_learnt(&self.graph, &self.deployed, self.h_max(), self.k()) {
            Ok(d) => {
                self.record(Action::Evaluate, BTreeSet::new(), BTreeSet::new(), true, Some(&d));
                self.infeasible = None;
                Ok(d)
            }
            Err(e) => {
                self.record(Action::Evaluate, BTreeSet::new(), BTreeSet::new(), false, None);
                self.infeasible = Some(e.clone());
                Err(e.into())
            }
        }
    }

    /// Adds the relays the hybrid graph needs; they are deployed at once.
    pub fn augment(&mut self) -> Result<BTreeSet<NodeId>, DesignerError> {
        let r = match topology::augment(&self.graph, &self.deployed, self.h_max(), self.k()) {
            Ok(r) => r,
            Err(e) => {
                self.record(Action::Augment, BTreeSet::new(), BTreeSet::new(), false, None);
                self.infeasible = Some(e.clone());
                return Err(e.into());
            }
        };
        if r.additional.is_empty() {
            // The hybrid graph only differs from the learnt one through
            // undeployed locations, so an empty augmentation means there is
            // nothing left to try.
            let e = Infeasible { source: None, reason: "augmentation adds no relay".into() };
            self.record(Action::Augment, BTreeSet::new(), BTreeSet::new(), false, None);
            self.infeasible = Some(e.clone());
            return Err(e.into());
        }
        self.deploy(&r.additional);
        self.record(Action::Augment, r.additional.clone(), BTreeSet::new(), true, Some(&r.design));
        self.infeasible = None;
        Ok(r.additional)
    }

    /// Keeps only the relays of `design`; the session starts operating.
    fn finalize(&mut self, design: Design) -> BTreeSet<NodeId> {
        let keep: BTreeSet<NodeId> = self.fixed_nodes().union(&design.relays_used).copied().collect();
        let removed: BTreeSet<NodeId> = self.deployed.difference(&keep).copied().collect();
        self.deployed = keep;
        self.graph.set_deployed(&self.deployed);
        if let Some(last) = self.iteration_log.last_mut() {
            last.relays_removed = removed.clone();
        }
        self.current_design = Some(design);
        self.phase = Phase::Operating;
        removed
    }

    /// Commits the design found by the evaluation that was just logged.
    /// Returns the relays taken back.
    pub fn finalize_evaluated(&mut self) -> Result<BTreeSet<NodeId>, DesignerError> {
        self.require(Phase::Designing)?;
        match self.iteration_log.last() {
            Some(r) if r.action == Action::Evaluate && r.feasible => {}
            _ => return Err(DesignerError::Precondition("finalize needs a feasible evaluation first".into())),
        }
        let d = topology::evaluate_learnt(&self.graph, &self.deployed, self.h_max(), self.k())?;
        Ok(self.finalize(d))
    }

    /// One learn → evaluate → augment loop per iteration until the learnt
    /// network is feasible, then finalize. Runs the initial design first
    /// when needed.
    pub fn iterate_until_feasible(
        &mut self,
        field: &mut dyn CampaignProvider,
        max_iterations: Option<usize>,
    ) -> Result<(Design, usize), DesignerError> {
        self.require(Phase::Designing)?;
        if self.iteration_log.is_empty() {
            self.initial_design()?;
        }
        let max = max_iterations.unwrap_or(self.scenario.potential_relays().len().max(1));
        for iteration in 1..=max {
            self.learn_links(field)?;
            match self.evaluate() {
                Ok(d) => {
                    self.finalize(d.clone());
                    return Ok((d, iteration));
                }
                Err(DesignerError::Infeasible(_)) => {
                    self.augment()?;
                }
                Err(e) => return Err(e),
            }
        }
        Err(DesignerError::IterationLimit(max))
    }

    /// Advances the design loop by one action.
    pub fn step(&mut self, field: &mut dyn CampaignProvider) -> Result<StepOutcome, DesignerError> {
        self.require(Phase::Designing)?;
        let last = self.iteration_log.last().map(|r| (r.action, r.feasible));
        match last {
            None => {
                let feasible = self.initial_design().is_ok();
                Ok(StepOutcome::Designed { feasible })
            }
            Some((Action::Initial, false)) | Some((Action::Augment, false)) => {
                Err(DesignerError::Infeasible(self.infeasible.clone().unwrap_or(Infeasible {
                    source: None,
                    reason: "declared infeasible; place relays to continue".into(),
                })))
            }
            Some((Action::Learn, _)) => match self.evaluate() {
                Ok(d) => Ok(StepOutcome::Finalized { removed: self.finalize(d) }),
                Err(DesignerError::Infeasible(_)) => Ok(StepOutcome::Evaluated { feasible: false }),
                Err(e) => Err(e),
            },
            Some((Action::Evaluate, false)) => Ok(StepOutcome::Augmented { added: self.augment()? }),
            Some(_) => {
                self.learn_links(field)?;
                Ok(StepOutcome::Learnt)
            }
        }
    }

    /// User places relays at `add` and takes back `remove`. A relay used by
    /// the current design cannot be removed.
    pub fn user_override(&mut self, add: &BTreeSet<NodeId>, remove: &BTreeSet<NodeId>) -> Result<(), DesignerError> {
        if self.phase == Phase::Operating {
            return Err(DesignerError::WrongPhase { expected: Phase::Designing, actual: self.phase });
        }
        let relays: BTreeSet<NodeId> = self.scenario.potential_relays().into_iter().collect();
        if let Some(v) = add.iter().chain(remove).find(|v| !relays.contains(v)) {
            return Err(DesignerError::UnknownRelay(*v));
        }
        if let Some(d) = &self.current_design {
            if let Some(v) = remove.iter().find(|v| d.relays_used.contains(v)) {
                return Err(DesignerError::WouldOrphan(*v));
            }
        }
        let removed: BTreeSet<NodeId> = remove.intersection(&self.deployed).copied().collect();
        for v in &removed {
            self.deployed.remove(v);
        }
        let added: BTreeSet<NodeId> = add.difference(&self.deployed).copied().collect();
        self.deploy(&added);
        self.graph.set_deployed(&self.deployed);
        let design = self.current_design.clone();
        self.record(Action::UserOverride, added, removed, self.infeasible.is_none(), design.as_ref());
        Ok(())
    }

    /// Relearns, redesigns on the deployed nodes and augments only when
    /// that fails. Deployed relays are never removed.
    pub fn repair(
        &mut self,
        field: &mut dyn CampaignProvider,
        windowed_pdel: &BTreeMap<NodeId, f64>,
        max_iterations: Option<usize>,
    ) -> Result<Design, DesignerError> {
        if self.phase != Phase::Repairing {
            self.require(Phase::Operating)?;
            if !windowed_pdel.values().any(|&p| p < self.qos.p_del) {
                return Err(DesignerError::NoDegradation);
            }
            self.phase = Phase::Repairing;
        }
        let max = max_iterations.unwrap_or(self.scenario.potential_relays().len().max(1));
        let mut added = BTreeSet::new();
        for _ in 0..max {
            self.learn_links(field)?;
            match topology::evaluate_learnt(&self.graph, &self.deployed, self.h_max(), self.k()) {
                Ok(d) => {
                    self.record(Action::Repair, added, BTreeSet::new(), true, Some(&d));
                    self.current_design = Some(d.clone());
                    self.infeasible = None;
                    self.phase = Phase::Operating;
                    return Ok(d);
                }
                Err(_) => {
                    let more = self.augment()?;
                    added.extend(more);
                }
            }
        }
        Err(DesignerError::IterationLimit(max))
    }
}
