//! One design session and the commands it accepts, independent of HTTP.

use std::collections::{BTreeMap, BTreeSet};

use relaynet_core::designer::{
    Action, CampaignError, CampaignMode, CampaignProvider, DesignerError, IterationRecord, LinkObservation, Phase,
    SessionState, SimulatedField,
};
use relaynet_core::fieldsim::{ChannelPreset, GroundTruthChannel};
use relaynet_core::scenario::{DeploymentScenario, LinkModelSpec, NodeId};
use relaynet_core::topology::{Design, Edge, Infeasible, NetworkGraph, Provenance};
use relaynet_core::{LinkModel, QosSpec};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_CAMPAIGN_PACKETS: u64 = 2000;
pub const DEFAULT_RSSI_MIN_DBM: f64 = -88.0;
pub const DEFAULT_Q_MAX: f64 = 0.05;
const DEFAULT_PRESET: &str = "indoor";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    #[default]
    Simulated,
    /// Measurements arrive with each learn or repair request.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub scenario: DeploymentScenario,
    /// Replaces the scenario's QoS when given.
    #[serde(default)]
    pub qos: Option<QosSpec>,
    /// Built-in channel preset: the simulated field and, for scenarios
    /// whose link model is `"estimate"`, the calibration campaign.
    #[serde(default)]
    pub channel_preset: Option<String>,
    #[serde(default)]
    pub field: FieldKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_packets")]
    pub campaign_packets: u64,
    #[serde(default = "default_rssi_min")]
    pub rssi_min_dbm: f64,
    #[serde(default = "default_q_max")]
    pub q_max: f64,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_packets() -> u64 {
    DEFAULT_CAMPAIGN_PACKETS
}
fn default_rssi_min() -> f64 {
    DEFAULT_RSSI_MIN_DBM
}
fn default_q_max() -> f64 {
    DEFAULT_Q_MAX
}

impl CreateSession {
    pub fn new(scenario: DeploymentScenario) -> Self {
        CreateSession {
            scenario,
            qos: None,
            channel_preset: None,
            field: FieldKind::Simulated,
            seed: DEFAULT_SEED,
            campaign_packets: DEFAULT_CAMPAIGN_PACKETS,
            rssi_min_dbm: DEFAULT_RSSI_MIN_DBM,
            q_max: DEFAULT_Q_MAX,
        }
    }

    fn preset(&self) -> Result<Option<ChannelPreset>, ApiError> {
        match &self.channel_preset {
            None => Ok(None),
            Some(name) => ChannelPreset::builtin(name)
                .map(Some)
                .ok_or_else(|| ApiError::bad_request(format!("unknown channel preset {name:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaysRequest {
    #[serde(default)]
    pub add: BTreeSet<NodeId>,
    #[serde(default)]
    pub remove: BTreeSet<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Design,
    Learn,
    Evaluate,
    Augment,
    Finalize,
    Repair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub action: StepAction,
    /// Campaign results for external fields.
    #[serde(default)]
    pub observations: Option<Vec<LinkObservation>>,
    /// Windowed delivery per source that motivates a repair.
    #[serde(default)]
    pub windowed_pdel: BTreeMap<NodeId, f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

impl StepRequest {
    pub fn new(action: StepAction) -> Self {
        StepRequest { action, observations: None, windowed_pdel: BTreeMap::new(), max_iterations: None }
    }
}

/// Everything that changes a session, as recorded on its event stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "request")]
pub enum Command {
    Create(Box<CreateSession>),
    Relays(RelaysRequest),
    Step(StepRequest),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphViewKind {
    Model,
    Learnt,
    Hybrid,
}

/// Summary of a session's state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub phase: Phase,
    pub field: FieldKind,
    pub link_model: LinkModel,
    pub qos: QosSpec,
    pub h_max: u32,
    pub k: usize,
    pub deployed: BTreeSet<NodeId>,
    pub design: Option<Design>,
    pub infeasible: Option<Infeasible>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphResponse {
    pub view: GraphViewKind,
    pub graph: NetworkGraph,
    pub routes: BTreeMap<NodeId, Vec<Vec<NodeId>>>,
    pub per_source_pdel_predicted: BTreeMap<NodeId, f64>,
}

/// Changes to the session graph made by one command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub edges_changed: Vec<Edge>,
    pub edges_removed: Vec<(NodeId, NodeId)>,
    pub deployed_added: BTreeSet<NodeId>,
    pub deployed_removed: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub action: StepAction,
    pub feasible: bool,
    /// Present when the action ended in a declaration of infeasibility;
    /// placing relays by hand is the way forward.
    pub infeasible: Option<Infeasible>,
    pub records: Vec<IterationRecord>,
    pub per_source_pdel_predicted: BTreeMap<NodeId, f64>,
    pub delta: GraphDelta,
    pub session: SessionView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaysResponse {
    pub records: Vec<IterationRecord>,
    pub delta: GraphDelta,
    pub graph: NetworkGraph,
    pub session: SessionView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub session_id: String,
    pub phase: Phase,
    pub iterations: usize,
    pub events: u64,
    pub h_max: u32,
    pub k: usize,
    pub deployed_relays: usize,
    pub design_relays: Option<usize>,
    pub feasible: Option<bool>,
    pub per_source_pdel_predicted: BTreeMap<NodeId, f64>,
    pub per_route_pdel_predicted: BTreeMap<NodeId, Vec<f64>>,
    pub learnt_good_links: usize,
    pub learnt_bad_links: usize,
    pub modeled_links: usize,
    pub control_unreachable: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Created,
    UserOverride,
    Step,
}

/// One entry of a session's event stream. The records of all events, in
/// order, are the session's iteration log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub session_id: String,
    pub kind: EventKind,
    pub command: Command,
    pub records: Vec<IterationRecord>,
    pub infeasible: Option<Infeasible>,
    pub session: SessionView,
    /// Hybrid view after the command.
    pub graph: NetworkGraph,
}

/// A session as owned by the service and written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub field_kind: FieldKind,
    pub state: SessionState,
    /// Present for simulated fields.
    pub field: Option<SimulatedFieldState>,
    pub events: Vec<Event>,
}

/// Serializable wrapper so persisted sessions compare by value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulatedFieldState(pub SimulatedField);

impl PartialEq for SimulatedFieldState {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(&self.0).ok() == serde_json::to_value(&other.0).ok()
    }
}

/// Campaign provider answering with measurements supplied by the client.
struct Supplied<'a>(&'a [LinkObservation]);

impl CampaignProvider for Supplied<'_> {
    fn campaign(&mut self, deployed: &BTreeSet<NodeId>) -> Result<Vec<LinkObservation>, CampaignError> {
        Ok(self.0.iter().filter(|o| deployed.contains(&o.tx_id) && deployed.contains(&o.rx_id)).copied().collect())
    }
}

/// Link model for a create request; calibrates the preset when the
/// scenario asks for an estimate.
pub fn resolve_link_model(req: &CreateSession) -> Result<LinkModel, ApiError> {
    match &req.scenario.link_model {
        LinkModelSpec::Given(m) => Ok(*m),
        LinkModelSpec::Keyword(_) => {
            let preset = req
                .preset()?
                .ok_or_else(|| ApiError::bad_request("link_model \"estimate\" needs a channel_preset"))?;
            preset
                .calibrate(req.seed, req.rssi_min_dbm, req.q_max)
                .map(|e| e.model)
                .map_err(|e| ApiError::bad_request(format!("calibration failed: {e}")))
        }
    }
}

impl ApiSession {
    /// Builds a session in the designing phase. `link_model` comes from
    /// [`resolve_link_model`], which may be slow, so callers can run it
    /// off the request path.
    pub fn create(session_id: String, req: CreateSession, link_model: LinkModel) -> Result<Self, ApiError> {
        req.scenario.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut scenario = req.scenario.clone();
        if let Some(q) = &req.qos {
            scenario.qos = *q;
            scenario.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        }
        let state = SessionState::new(scenario, link_model).map_err(ApiError::from)?;
        let field = match req.field {
            FieldKind::External => None,
            FieldKind::Simulated => {
                let preset = req.preset()?.unwrap_or_else(|| ChannelPreset::builtin(DEFAULT_PRESET).expect("built in"));
                let ch = GroundTruthChannel::new(preset.channel.with_seed(req.seed), state.scenario.positions())
                    .map_err(|e| ApiError::bad_request(e.to_string()))?;
                if req.campaign_packets == 0 {
                    return Err(ApiError::bad_request("campaign_packets must be at least 1"));
                }
                Some(SimulatedFieldState(SimulatedField::new(
                    ch,
                    req.campaign_packets,
                    req.rssi_min_dbm,
                    CampaignMode::Counts,
                )))
            }
        };
        let mut s = ApiSession { session_id, field_kind: req.field, state, field, events: Vec::new() };
        s.push_event(EventKind::Created, Command::Create(Box::new(req)), Vec::new(), None);
        Ok(s)
    }

    pub fn view(&self) -> SessionView {
        let s = &self.state;
        SessionView {
            session_id: self.session_id.clone(),
            phase: s.phase,
            field: self.field_kind,
            link_model: s.link_model,
            qos: s.qos,
            h_max: s.h_max(),
            k: s.k(),
            deployed: s.deployed.clone(),
            design: s.current_design.clone(),
            infeasible: s.infeasible.clone(),
            iterations: s.iteration_log.len(),
        }
    }

    fn with_deployed(&self, mut g: NetworkGraph) -> NetworkGraph {
        g.set_deployed(&self.state.deployed);
        g
    }

    pub fn graph(&self, view: GraphViewKind) -> GraphResponse {
        let s = &self.state;
        let graph = match view {
            GraphViewKind::Model => s.graph.model_view(s.link_model.r_max_m),
            GraphViewKind::Hybrid => s.graph.hybrid_view(&s.deployed),
            GraphViewKind::Learnt => {
                let mut g = NetworkGraph::new(s.graph.nodes().to_vec());
                for e in s.graph.edges().filter(|e| e.provenance.is_learnt()) {
                    g.set_edge(e.a, e.b, e.provenance, e.p_out_hat);
                }
                g
            }
        };
        GraphResponse {
            view,
            graph: self.with_deployed(graph),
            routes: s.current_design.as_ref().map(|d| d.routes.clone()).unwrap_or_default(),
            per_source_pdel_predicted: self.predicted(),
        }
    }

    fn predicted(&self) -> BTreeMap<NodeId, f64> {
        match &self.state.current_design {
            Some(d) => self.state.predicted_pdel(d),
            None => self.state.iteration_log.last().map(|r| r.per_source_pdel_predicted.clone()).unwrap_or_default(),
        }
    }

    pub fn metrics(&self) -> Metrics {
        let s = &self.state;
        let count = |p: Provenance| s.graph.edges().filter(|e| e.provenance == p).count();
        let relays: BTreeSet<NodeId> = s.scenario.potential_relays().into_iter().collect();
        Metrics {
            session_id: self.session_id.clone(),
            phase: s.phase,
            iterations: s.iteration_log.len(),
            events: self.events.len() as u64,
            h_max: s.h_max(),
            k: s.k(),
            deployed_relays: s.deployed.intersection(&relays).count(),
            design_relays: s.current_design.as_ref().map(Design::relay_count),
            feasible: s.iteration_log.last().map(|r| r.feasible),
            per_source_pdel_predicted: self.predicted(),
            per_route_pdel_predicted: s
                .current_design
                .as_ref()
                .map(|d| s.predicted_route_pdel(d))
                .unwrap_or_default(),
            learnt_good_links: count(Provenance::LearntGood),
            learnt_bad_links: count(Provenance::LearntBad),
            modeled_links: count(Provenance::Modeled),
            control_unreachable: s
                .iteration_log
                .iter()
                .rev()
                .find(|r| r.action == Action::Learn)
                .map(|r| r.control_unreachable.clone())
                .unwrap_or_default(),
        }
    }

    fn push_event(
        &mut self,
        kind: EventKind,
        command: Command,
        records: Vec<IterationRecord>,
        infeasible: Option<Infeasible>,
    ) -> &Event {
        let ev = Event {
            seq: self.events.len() as u64,
            session_id: self.session_id.clone(),
            kind,
            command,
            records,
            infeasible,
            session: self.view(),
            graph: self.with_deployed(self.state.graph.hybrid_view(&self.state.deployed)),
        };
        self.events.push(ev);
        self.events.last().expect("just pushed")
    }

    /// Applies a relay override. Nothing changes on error.
    pub fn apply_relays(&mut self, req: RelaysRequest) -> Result<RelaysResponse, ApiError> {
        let before = self.state.graph.clone();
        let mark = self.state.iteration_log.len();
        self.state.user_override(&req.add, &req.remove)?;
        let records = self.state.iteration_log[mark..].to_vec();
        let delta = graph_delta(&before, &self.state.graph);
        self.push_event(EventKind::UserOverride, Command::Relays(req), records.clone(), None);
        Ok(RelaysResponse { records, delta, graph: self.graph(GraphViewKind::Hybrid).graph, session: self.view() })
    }

    /// Runs one design action. A declaration of infeasibility is a result,
    /// not an error; illegal actions leave the session untouched.
    pub fn apply_step(&mut self, req: StepRequest) -> Result<StepResponse, ApiError> {
        self.check_legal(&req)?;
        let before = self.state.graph.clone();
        let mark = self.state.iteration_log.len();
        let mut field_copy = self.field.clone();
        let mut supplied;
        let provider: &mut dyn CampaignProvider = match (&mut field_copy, &req.observations) {
            (Some(f), None) => &mut f.0,
            (_, Some(obs)) => {
                supplied = Supplied(obs);
                &mut supplied
            }
            (None, None) => {
                supplied = Supplied(&[]);
                &mut supplied
            }
        };
        let result = match req.action {
            StepAction::Design => self.state.initial_design().map(|_| ()),
            StepAction::Learn => self.state.learn_links(provider),
            StepAction::Evaluate => self.state.evaluate().map(|_| ()),
            StepAction::Augment => self.state.augment().map(|_| ()),
            StepAction::Finalize => self.state.finalize_evaluated().map(|_| ()),
            StepAction::Repair => self.state.repair(provider, &req.windowed_pdel, req.max_iterations).map(|_| ()),
        };
        let infeasible = match result {
            Ok(()) => None,
            Err(DesignerError::Infeasible(e)) => Some(e),
            Err(DesignerError::IterationLimit(n)) => {
                Some(Infeasible { source: None, reason: format!("no feasible design after {n} iterations") })
            }
            Err(e) => {
                if self.state.iteration_log.len() != mark {
                    // Campaign failures inside a repair can follow logged
                    // work; keep that work but report the error.
                    let records = self.state.iteration_log[mark..].to_vec();
                    self.field = field_copy;
                    self.push_event(EventKind::Step, Command::Step(req), records, None);
                }
                return Err(e.into());
            }
        };
        self.field = field_copy;
        let records = self.state.iteration_log[mark..].to_vec();
        let feasible = infeasible.is_none() && records.last().is_none_or(|r| r.feasible);
        let delta = graph_delta(&before, &self.state.graph);
        self.push_event(EventKind::Step, Command::Step(req.clone()), records.clone(), infeasible.clone());
        Ok(StepResponse {
            action: req.action,
            feasible,
            infeasible,
            records,
            per_source_pdel_predicted: self.predicted(),
            delta,
            session: self.view(),
        })
    }

    fn check_legal(&self, req: &StepRequest) -> Result<(), ApiError> {
        let s = &self.state;
        let conflict = |m: &str| Err(ApiError::conflict(format!("{:?} not allowed: {m}", req.action).to_lowercase()));
        let designing = s.phase == Phase::Designing;
        let learnt = s.iteration_log.iter().any(|r| r.action == Action::Learn);
        let needs_measurements = matches!(req.action, StepAction::Learn | StepAction::Repair);
        if needs_measurements && self.field.is_none() && req.observations.is_none() {
            return Err(ApiError::bad_request("an external field needs observations for learn and repair"));
        }
        match req.action {
            StepAction::Design if !designing || !s.iteration_log.is_empty() => {
                conflict("the initial design is already made")
            }
            StepAction::Learn if !designing => conflict("the session is not designing"),
            StepAction::Learn if s.deployed.len() < 2 => conflict("nothing deployed yet"),
            StepAction::Evaluate if !designing || !learnt => conflict("evaluate needs a learn step while designing"),
            StepAction::Augment if !designing || s.infeasible.is_none() => {
                conflict("augment needs an infeasible evaluation")
            }
            StepAction::Finalize
                if !designing
                    || !s.iteration_log.last().is_some_and(|r| r.action == Action::Evaluate && r.feasible) =>
            {
                conflict("finalize needs a feasible evaluation")
            }
            StepAction::Repair if designing => conflict("repair needs a finalized network"),
            _ => Ok(()),
        }
    }

    /// Applies a recorded command; used to rebuild a session from its
    /// event stream.
    pub fn apply(&mut self, cmd: Command) -> Result<(), ApiError> {
        match cmd {
            Command::Create(_) => Err(ApiError::conflict("session already created")),
            Command::Relays(r) => self.apply_relays(r).map(|_| ()),
            Command::Step(r) => self.apply_step(r).map(|_| ()),
        }
    }

    /// Rebuilds a session by re-running the commands of an event stream.
    pub fn replay(events: &[Event]) -> Result<Self, ApiError> {
        let (first, rest) = events.split_first().ok_or_else(|| ApiError::bad_request("empty event stream"))?;
        let Command::Create(req) = &first.command else {
            return Err(ApiError::bad_request("event stream must start with a create command"));
        };
        let model = resolve_link_model(req)?;
        let mut s = ApiSession::create(first.session_id.clone(), (**req).clone(), model)?;
        for ev in rest {
            // Failed commands that still logged work are replayed the same way.
            let _ = s.apply(ev.command.clone());
        }
        Ok(s)
    }
}

fn graph_delta(before: &NetworkGraph, after: &NetworkGraph) -> GraphDelta {
    let old: BTreeMap<(NodeId, NodeId), &Edge> = before.edges().map(|e| ((e.a, e.b), e)).collect();
    let new: BTreeMap<(NodeId, NodeId), &Edge> = after.edges().map(|e| ((e.a, e.b), e)).collect();
    let deployed_before = before.deployed();
    let deployed_after = after.deployed();
    GraphDelta {
        edges_changed: new.iter().filter(|(k, e)| old.get(*k) != Some(*e)).map(|(_, e)| **e).collect(),
        edges_removed: old.keys().filter(|k| !new.contains_key(*k)).copied().collect(),
        deployed_added: deployed_after.difference(&deployed_before).copied().collect(),
        deployed_removed: deployed_before.difference(&deployed_after).copied().collect(),
    }
}
