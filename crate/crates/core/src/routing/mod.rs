//! Operating a deployed network: static multi-route forwarding with
//! periodic traceroute, an RPL-style dynamic tree driven by windowed
//! link estimates, and the repair-trigger heuristics.

pub mod fixtures;
mod sim;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::NodeId;

pub use sim::{simulate, DeliverySeries, LinkEvent, OperatedNetwork, Protocol, RoutingSimConfig, SimOutcome, WindowRow};

/// Lower clamp of every link estimate.
pub const EPSILON: f64 = 1e-4;
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Packets per link-estimation window.
pub const LINK_WINDOW_PACKETS: usize = 20;
/// Seconds between traceroute probes of the active static route.
pub const TRACEROUTE_PERIOD_S: f64 = 150.0;
/// Rank changes smaller than this do not count as a change.
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("{0} must lie in [0, 1], got {1}")]
    OutOfRange(&'static str, f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// `(1 − α)·window_per + α·previous`, clamped to `[ε, 1]`.
pub fn ewma_update(previous: f64, window_per: f64, alpha: f64) -> Result<f64, RoutingError> {
    for (name, v) in [("previous", previous), ("window_per", window_per), ("alpha", alpha)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(RoutingError::OutOfRange(name, v));
        }
    }
    Ok(((1.0 - alpha) * window_per + alpha * previous).clamp(EPSILON, 1.0))
}

/// Path cost of a link never measured: the estimate still sits at its
/// initial 1, which is costed as if it were `1 − ε` instead of detaching.
pub fn bootstrap_cost() -> f64 {
    -EPSILON.ln()
}

/// Additive rank increment of a link: `−ln(1 − q̂)`, infinite at `q̂ = 1`.
pub fn link_cost(q_hat: f64) -> f64 {
    if q_hat >= 1.0 {
        f64::INFINITY
    } else {
        -(1.0 - q_hat).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RplNodeState {
    pub node_id: NodeId,
    pub potential_parents: BTreeSet<NodeId>,
    /// Packet error estimate per neighbour.
    pub link_estimate: BTreeMap<NodeId, f64>,
    /// Neighbours whose estimate has seen at least one window.
    pub measured: BTreeSet<NodeId>,
    /// `f64::INFINITY` while detached.
    pub rank: f64,
    pub preferred_parent: Option<NodeId>,
}

impl RplNodeState {
    /// A detached node whose links all start at the initial estimate 1.
    pub fn new(node_id: NodeId, potential_parents: BTreeSet<NodeId>) -> Self {
        let link_estimate = potential_parents.iter().map(|&p| (p, 1.0)).collect();
        RplNodeState {
            node_id,
            potential_parents,
            link_estimate,
            measured: BTreeSet::new(),
            rank: f64::INFINITY,
            preferred_parent: None,
        }
    }

    pub fn root(node_id: NodeId) -> Self {
        RplNodeState { rank: 0.0, ..RplNodeState::new(node_id, BTreeSet::new()) }
    }

    pub fn is_root(&self) -> bool {
        self.rank == 0.0 && self.potential_parents.is_empty()
    }

    pub fn is_detached(&self) -> bool {
        !self.is_root() && self.preferred_parent.is_none()
    }

    /// Current cost of the link to `p`.
    pub fn cost_to(&self, p: NodeId) -> f64 {
        if !self.measured.contains(&p) {
            return bootstrap_cost();
        }
        link_cost(self.link_estimate.get(&p).copied().unwrap_or(1.0))
    }

    /// Folds one window of packet errors on the link to `p` into its estimate.
    pub fn record_window(&mut self, p: NodeId, window_per: f64, alpha: f64) -> Result<(), RoutingError> {
        let prev = self.link_estimate.get(&p).copied().unwrap_or(1.0);
        self.link_estimate.insert(p, ewma_update(prev, window_per, alpha)?);
        self.measured.insert(p);
        Ok(())
    }
}

fn rank_moved(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a != b;
    }
    (a - b).abs() > RANK_TOLERANCE
}

/// Picks the preferred parent and rank from the neighbours' advertised
/// ranks. Only parents ranked strictly below the node's current rank are
/// eligible, so no loop can form; a detached node may join any parent with
/// a finite rank. Returns whether the parent or rank changed, which is the
/// cue for a rank broadcast.
pub fn recompute_rank_and_parent(node: &mut RplNodeState, neighbor_ranks: &BTreeMap<NodeId, f64>) -> bool {
    if node.is_root() {
        return false;
    }
    let mut best: Option<(f64, NodeId)> = None;
    for &p in &node.potential_parents {
        let Some(&rp) = neighbor_ranks.get(&p) else { continue };
        if !rp.is_finite() || !(node.rank.is_infinite() || rp < node.rank) {
            continue;
        }
        let r = rp + node.cost_to(p);
        if !r.is_finite() {
            continue;
        }
        if best.is_none_or(|(br, _)| r < br) {
            best = Some((r, p));
        }
    }
    let (rank, parent) = match best {
        Some((r, p)) => (r, Some(p)),
        None => (f64::INFINITY, None),
    };
    let changed = parent != node.preferred_parent || rank_moved(rank, node.rank);
    node.rank = rank;
    node.preferred_parent = parent;
    changed
}

/// The RPL tree of a whole network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RplTree {
    pub sink: NodeId,
    pub nodes: BTreeMap<NodeId, RplNodeState>,
}

impl RplTree {
    /// Potential parents are the good neighbours known at deployment and
    /// stay fixed for the run.
    pub fn new(sink: NodeId, nodes: &BTreeSet<NodeId>, good_links: &BTreeSet<(NodeId, NodeId)>) -> Self {
        let mut states = BTreeMap::new();
        for &v in nodes {
            if v == sink {
                states.insert(v, RplNodeState::root(v));
                continue;
            }
            let parents = good_links
                .iter()
                .filter_map(|&(a, b)| if a == v { Some(b) } else if b == v { Some(a) } else { None })
                .filter(|u| nodes.contains(u))
                .collect();
            states.insert(v, RplNodeState::new(v, parents));
        }
        let mut tree = RplTree { sink, nodes: states };
        tree.settle();
        tree
    }

    pub fn ranks(&self) -> BTreeMap<NodeId, f64> {
        self.nodes.iter().map(|(id, s)| (*id, s.rank)).collect()
    }

    /// One round of rank broadcasts: nodes recompute in order of their
    /// current rank, each seeing the freshest ranks of the others.
    /// One broadcast round: every node, in rank order, recomputes against
    /// the ranks visible at that moment. Returns whether anything moved.
    pub fn round(&mut self) -> bool {
        let mut order: Vec<(f64, NodeId)> = self.nodes.values().map(|s| (s.rank, s.node_id)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut ranks = self.ranks();
        let mut changed = false;
        for (_, v) in order {
            let node = self.nodes.get_mut(&v).expect("listed node");
            if recompute_rank_and_parent(node, &ranks) {
                changed = true;
                ranks.insert(v, node.rank);
            }
        }
        changed
    }

    /// Repeats rounds until no rank moves. Returns the number of rounds
    /// that changed something.
    pub fn settle(&mut self) -> usize {
        let cap = 4 * self.nodes.len().max(1);
        let mut n = 0;
        while n < cap && self.round() {
            n += 1;
        }
        n
    }

    /// Hop sequence from `v` along preferred parents, ending at the sink,
    /// or `None` when the chain breaks.
    pub fn path_from(&self, v: NodeId) -> Option<Vec<NodeId>> {
        let mut path = vec![v];
        let mut cur = v;
        while cur != self.sink {
            let next = self.nodes.get(&cur)?.preferred_parent?;
            if path.len() > self.nodes.len() {
                return None;
            }
            path.push(next);
            cur = next;
        }
        Some(path)
    }

    /// Every attached node ranks strictly above its preferred parent.
    pub fn ranks_decrease_toward_sink(&self) -> bool {
        self.nodes.values().all(|s| match s.preferred_parent {
            Some(p) => self.nodes.get(&p).is_some_and(|ps| ps.rank < s.rank),
            None => true,
        })
    }
}

/// Static forwarding state of one source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticRouteState {
    pub source: NodeId,
    pub routes: Vec<Vec<NodeId>>,
    pub active_index: usize,
    /// Time of the last probe; `None` before the first one.
    pub last_traceroute_t: Option<f64>,
    /// Set when the last probe found every route broken.
    pub delivery_failed: bool,
}

impl StaticRouteState {
    pub fn new(source: NodeId, routes: Vec<Vec<NodeId>>) -> Self {
        StaticRouteState { source, routes, active_index: 0, last_traceroute_t: None, delivery_failed: false }
    }

    pub fn active(&self) -> &[NodeId] {
        &self.routes[self.active_index]
    }
}

/// Probes the active route when a traceroute is due (every
/// [`TRACEROUTE_PERIOD_S`] from `t = 0`) and rotates to the next healthy
/// route on failure. Single-route sources are never probed.
pub fn static_route_step(state: &mut StaticRouteState, t: f64, mut probe: impl FnMut(&[NodeId]) -> bool) {
    if state.routes.len() < 2 {
        return;
    }
    let due = match state.last_traceroute_t {
        None => true,
        Some(last) => t - last >= TRACEROUTE_PERIOD_S - 1e-9,
    };
    if !due {
        return;
    }
    state.last_traceroute_t = Some(t);
    if probe(state.active()) {
        state.delivery_failed = false;
        return;
    }
    let n = state.routes.len();
    for step in 1..n {
        let i = (state.active_index + step) % n;
        if probe(&state.routes[i]) {
            state.active_index = i;
            state.delivery_failed = false;
            return;
        }
    }
    state.delivery_failed = true;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerPolicy {
    /// Grant the dynamic protocol one monitoring window to recover.
    OneWindow,
    /// Wait as long as the estimator needs to move a link from 1 to 0.01.
    EstimatorSettling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerDecision {
    Trigger,
    Hold,
}

/// Zero-error link windows needed to bring an estimate from 1 below 0.01.
pub fn settling_windows(alpha: f64) -> u32 {
    (0.01f64.ln() / alpha.ln()).ceil() as u32
}

/// Packets to wait under [`TriggerPolicy::EstimatorSettling`].
pub fn settling_packets(alpha: f64) -> usize {
    settling_windows(alpha) as usize * LINK_WINDOW_PACKETS
}

impl TriggerPolicy {
    /// Monitoring windows of grace after the first violation.
    pub fn wait_windows(self, monitor_window: usize) -> usize {
        match self {
            TriggerPolicy::OneWindow => 1,
            TriggerPolicy::EstimatorSettling => settling_packets(DEFAULT_ALPHA).div_ceil(monitor_window),
        }
    }
}

/// Triggers once the trailing run of windows below `target` outlasts the
/// policy's grace period.
pub fn repair_trigger_check(
    windows: &[f64],
    target: f64,
    policy: TriggerPolicy,
    monitor_window: usize,
) -> TriggerDecision {
    let run = windows.iter().rev().take_while(|&&p| p < target).count();
    if run > policy.wait_windows(monitor_window) {
        TriggerDecision::Trigger
    } else {
        TriggerDecision::Hold
    }
}
