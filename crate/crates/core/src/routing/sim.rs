//! Time-stepped operation of a deployed network under either static or
//! dynamic routing, on a drifting simulated field.
//!
//! Traffic follows the lone-packet regime, so packets never contend: each
//! hop draws one RSSI sample and, when above the threshold, succeeds unless
//! every MAC attempt is lost.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{static_route_step, RoutingError, RplTree, StaticRouteState, DEFAULT_ALPHA, LINK_WINDOW_PACKETS};
use crate::designer::SessionState;
use crate::fieldsim::GroundTruthChannel;
use crate::scenario::NodeId;
use crate::topology::Provenance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Static,
    Rpl,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Static => "static",
            Protocol::Rpl => "rpl",
        })
    }
}

/// Shadowing of the pair `(a, b)` is set to `shadow_db` at `time_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub time_s: f64,
    pub a: NodeId,
    pub b: NodeId,
    pub shadow_db: f64,
}

/// What the routing layer knows about a finished deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatedNetwork {
    pub sink: NodeId,
    pub sources: Vec<NodeId>,
    pub nodes: BTreeSet<NodeId>,
    /// Designed routes per source, used by static routing.
    pub routes: BTreeMap<NodeId, Vec<Vec<NodeId>>>,
    /// Pairs learnt good at deployment; RPL's potential parents.
    pub good_links: BTreeSet<(NodeId, NodeId)>,
}

impl OperatedNetwork {
    pub fn from_session(s: &SessionState) -> Result<Self, RoutingError> {
        let design = s
            .current_design
            .as_ref()
            .ok_or_else(|| RoutingError::Config("session has no design".into()))?;
        let good_links = s
            .graph
            .edges()
            .filter(|e| e.provenance == Provenance::LearntGood && s.deployed.contains(&e.a) && s.deployed.contains(&e.b))
            .map(|e| (e.a, e.b))
            .collect();
        Ok(OperatedNetwork {
            sink: s.scenario.sink(),
            sources: s.scenario.sources(),
            nodes: s.deployed.clone(),
            routes: design.routes.clone(),
            good_links,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingSimConfig {
    pub duration_s: f64,
    /// Data period of every source; also the simulation tick.
    pub data_period_s: f64,
    /// Control packet period of every attached node (multiple of the tick).
    pub dao_period_s: f64,
    /// Seconds between drift steps of the field.
    pub drift_step_s: f64,
    pub window_packets: usize,
    pub link_window_packets: usize,
    pub alpha: f64,
    pub q_max: f64,
    pub rssi_min_dbm: f64,
    pub max_tx_attempts: u32,
    /// When false, rank changes spread one neighbour round per tick
    /// instead of settling at once.
    pub immediate_rank_propagation: bool,
    pub seed: u64,
}

impl RoutingSimConfig {
    /// Five days at one packet per 15 s per source.
    pub fn new(q_max: f64, rssi_min_dbm: f64, seed: u64) -> Self {
        RoutingSimConfig {
            duration_s: 5.0 * 86_400.0,
            data_period_s: 15.0,
            dao_period_s: 15.0,
            drift_step_s: 3600.0,
            window_packets: 100,
            link_window_packets: LINK_WINDOW_PACKETS,
            alpha: DEFAULT_ALPHA,
            q_max,
            rssi_min_dbm,
            max_tx_attempts: 4,
            immediate_rank_propagation: true,
            seed,
        }
    }

    fn validate(&self) -> Result<(), RoutingError> {
        let bad = |m: &str| Err(RoutingError::Config(m.into()));
        if !(self.data_period_s > 0.0 && self.duration_s >= 0.0 && self.drift_step_s > 0.0) {
            return bad("periods must be positive");
        }
        if !(self.dao_period_s >= self.data_period_s) {
            return bad("control period must not be shorter than the data period");
        }
        if self.window_packets == 0 || self.link_window_packets == 0 || self.max_tx_attempts == 0 {
            return bad("window sizes and attempts must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..1.0).contains(&self.q_max) {
            return bad("alpha and q_max must be probabilities");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window_index: usize,
    pub source_id: NodeId,
    pub p_del_hat: f64,
    pub protocol: Protocol,
}

/// Per-source windowed delivery series, possibly of several protocols.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeliverySeries {
    pub rows: Vec<WindowRow>,
}

impl DeliverySeries {
    pub fn extend(&mut self, other: DeliverySeries) {
        self.rows.extend(other.rows);
    }

    pub fn source(&self, source: NodeId, protocol: Protocol) -> Vec<f64> {
        self.rows.iter().filter(|r| r.source_id == source && r.protocol == protocol).map(|r| r.p_del_hat).collect()
    }

    /// Mean over every window of every source.
    pub fn mean(&self, protocol: Protocol) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.protocol == protocol).map(|r| r.p_del_hat).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["window_index", "source_id", "p_del_hat", "protocol"])?;
        for r in &self.rows {
            out.write_record([
                r.window_index.to_string(),
                r.source_id.0.to_string(),
                format!("{:.6}", r.p_del_hat),
                r.protocol.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub series: DeliverySeries,
    /// Final RPL state; `None` for static routing.
    pub tree: Option<RplTree>,
    /// Whether every settled tree had ranks strictly decreasing toward the sink.
    pub loop_free: bool,
    /// Directed links that carried at least one RPL packet.
    pub used_links: BTreeSet<(NodeId, NodeId)>,
    pub static_states: Vec<StaticRouteState>,
}

struct Hop<'a> {
    channel: &'a GroundTruthChannel,
    cfg: &'a RoutingSimConfig,
    rng: ChaCha8Rng,
    p_all_lost: f64,
}

impl Hop<'_> {
    fn send(&mut self, a: NodeId, b: NodeId) -> Result<bool, RoutingError> {
        let rssi = self.channel.sample_rssi_with(a, b, &mut self.rng).map_err(|_| RoutingError::UnknownNode(a))?;
        if rssi < self.cfg.rssi_min_dbm {
            return Ok(false);
        }
        Ok(self.rng.random::<f64>() >= self.p_all_lost)
    }

    fn send_path(&mut self, path: &[NodeId]) -> Result<bool, RoutingError> {
        for w in path.windows(2) {
            if !self.send(w[0], w[1])? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[derive(Default)]
struct Counter {
    sent: usize,
    good: usize,
}

struct Windows {
    size: usize,
    protocol: Protocol,
    open: BTreeMap<NodeId, (usize, Counter)>,
    rows: Vec<WindowRow>,
}

impl Windows {
    fn record(&mut self, source: NodeId, delivered: bool) {
        let (index, c) = self.open.entry(source).or_default();
        c.sent += 1;
        c.good += delivered as usize;
        if c.sent == self.size {
            self.rows.push(WindowRow {
                window_index: *index,
                source_id: source,
                p_del_hat: c.good as f64 / c.sent as f64,
                protocol: self.protocol,
            });
            *index += 1;
            *c = Counter::default();
        }
    }

    fn finish(mut self) -> DeliverySeries {
        self.rows.sort_by(|a, b| a.window_index.cmp(&b.window_index).then(a.source_id.cmp(&b.source_id)));
        DeliverySeries { rows: self.rows }
    }
}

/// Runs one protocol over `channel` (cloned, so paired runs see the same
/// shadowing and drift trajectory) with `events` applied on the way.
pub fn simulate(
    net: &OperatedNetwork,
    channel: &GroundTruthChannel,
    events: &[LinkEvent],
    protocol: Protocol,
    cfg: &RoutingSimConfig,
) -> Result<SimOutcome, RoutingError> {
    cfg.validate()?;
    let mut ch = channel.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(match protocol {
        Protocol::Static => 21,
        Protocol::Rpl => 22,
    });
    let p_all_lost = cfg.q_max.powi(cfg.max_tx_attempts as i32);
    let mut events: Vec<LinkEvent> = events.to_vec();
    events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    let mut next_event = 0;

    let mut statics: Vec<StaticRouteState> = match protocol {
        Protocol::Static => net
            .sources
            .iter()
            .map(|s| {
                let routes = net.routes.get(s).cloned().unwrap_or_default();
                if routes.is_empty() {
                    Err(RoutingError::Config(format!("source {s} has no designed route")))
                } else {
                    Ok(StaticRouteState::new(*s, routes))
                }
            })
            .collect::<Result<_, _>>()?,
        Protocol::Rpl => Vec::new(),
    };
    let mut tree = (protocol == Protocol::Rpl).then(|| RplTree::new(net.sink, &net.nodes, &net.good_links));
    let mut loop_free = tree.as_ref().is_none_or(RplTree::ranks_decrease_toward_sink);
    let mut link_windows: BTreeMap<(NodeId, NodeId), Counter> = BTreeMap::new();
    let mut used_links = BTreeSet::new();
    let mut windows = Windows { size: cfg.window_packets, protocol, open: BTreeMap::new(), rows: Vec::new() };

    let ticks = (cfg.duration_s / cfg.data_period_s).floor() as u64;
    let dao_every = (cfg.dao_period_s / cfg.data_period_s).round().max(1.0) as u64;
    let mut next_drift = cfg.drift_step_s;

    for tick in 0..ticks {
        let t = tick as f64 * cfg.data_period_s;
        while t >= next_drift {
            ch.advance_cycles(1, cfg.drift_step_s / 3600.0);
            next_drift += cfg.drift_step_s;
        }
        while next_event < events.len() && events[next_event].time_s <= t {
            let e = events[next_event];
            ch.set_shadowing(e.a, e.b, e.shadow_db).map_err(|_| RoutingError::UnknownNode(e.a))?;
            next_event += 1;
        }
        let mut hop = Hop { channel: &ch, cfg, rng, p_all_lost };
        match &mut tree {
            None => {
                for st in statics.iter_mut() {
                    let mut err = None;
                    static_route_step(st, t, |r| match hop.send_path(r) {
                        Ok(ok) => ok,
                        Err(e) => {
                            err = Some(e);
                            false
                        }
                    });
                    if let Some(e) = err {
                        return Err(e);
                    }
                    let delivered = hop.send_path(st.active())?;
                    windows.record(st.source, delivered);
                }
            }
            Some(tree) => {
                if !cfg.immediate_rank_propagation && tree.round() {
                    loop_free &= tree.ranks_decrease_toward_sink();
                }
                let mut transmit = |tree: &mut RplTree, hop: &mut Hop, v: NodeId| -> Result<Option<NodeId>, RoutingError> {
                    let Some(p) = tree.nodes.get(&v).and_then(|s| s.preferred_parent) else { return Ok(None) };
                    let ok = hop.send(v, p)?;
                    used_links.insert((v, p));
                    let c = link_windows.entry((v, p)).or_default();
                    c.sent += 1;
                    c.good += ok as usize;
                    if c.sent == cfg.link_window_packets {
                        let per = (c.sent - c.good) as f64 / c.sent as f64;
                        *c = Counter::default();
                        tree.nodes.get_mut(&v).expect("known node").record_window(p, per, cfg.alpha)?;
                        if cfg.immediate_rank_propagation {
                            tree.settle();
                        } else {
                            tree.round();
                        }
                        loop_free &= tree.ranks_decrease_toward_sink();
                    }
                    Ok(ok.then_some(p))
                };
                for &s in &net.sources {
                    let mut cur = s;
                    let mut delivered = false;
                    for _ in 0..net.nodes.len() {
                        match transmit(tree, &mut hop, cur)? {
                            Some(next) if next == net.sink => {
                                delivered = true;
                                break;
                            }
                            Some(next) => cur = next,
                            None => break,
                        }
                    }
                    windows.record(s, delivered);
                }
                if tick % dao_every == 0 {
                    let attached: Vec<NodeId> =
                        tree.nodes.values().filter(|n| n.preferred_parent.is_some()).map(|n| n.node_id).collect();
                    for v in attached {
                        transmit(tree, &mut hop, v)?;
                    }
                }
            }
        }
        rng = hop.rng;
    }
    Ok(SimOutcome { series: windows.finish(), tree, loop_free, used_links, static_states: statics })
}
