//! Event-driven simulation of unslotted CSMA/CA over a designed network.
//!
//! Time runs on the PHY symbol lattice. Every packet-hop draws one RSSI
//! sample; below `rssi_min` the hop is in outage for all its attempts.
//! Two transmissions collide when a transmitter is within carrier-sense
//! range of the other link's receiver, and a node only defers when it can
//! hear an ongoing exchange.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{FieldError, GroundTruthChannel};
use crate::qosmap::{MacParams, QosSpec};
use crate::scenario::NodeId;
use crate::topology::Design;

pub const DEFAULT_WINDOW_PACKETS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacSimConfig {
    pub mac: MacParams,
    /// Per-attempt error rate on a link that is not in outage.
    pub q_max: f64,
    pub rssi_min_dbm: f64,
    /// Per-attempt error rate while in outage.
    pub per_below_threshold: f64,
    /// Carrier-sense and interference radius.
    pub cs_range_m: f64,
    pub window_packets: usize,
    pub seed: u64,
}

impl MacSimConfig {
    /// Carrier sensing at `cs_factor · r_max`.
    pub fn new(q_max: f64, rssi_min_dbm: f64, r_max_m: f64, cs_factor: f64, seed: u64) -> Self {
        MacSimConfig {
            mac: MacParams::default(),
            q_max,
            rssi_min_dbm,
            per_below_threshold: 1.0,
            cs_range_m: r_max_m * cs_factor,
            window_packets: DEFAULT_WINDOW_PACKETS,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveryWindow {
    pub window_index: usize,
    pub packets_sent: usize,
    pub packets_delivered_in_time: usize,
    pub p_del_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceLog {
    pub source_id: NodeId,
    pub packets_sent: usize,
    pub packets_delivered_in_time: usize,
    pub windows: Vec<DeliveryWindow>,
}

impl SourceLog {
    pub fn p_del_hat(&self) -> f64 {
        if self.packets_sent == 0 {
            return 0.0;
        }
        self.packets_delivered_in_time as f64 / self.packets_sent as f64
    }
}

/// Windowed in-time delivery per source. Only complete windows are listed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveryLog {
    pub window_packets: usize,
    pub sources: Vec<SourceLog>,
}

impl DeliveryLog {
    pub fn source(&self, id: NodeId) -> Option<&SourceLog> {
        self.sources.iter().find(|s| s.source_id == id)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["source_id", "window_index", "packets_sent", "packets_delivered_in_time", "p_del_hat"])?;
        for s in &self.sources {
            for win in &s.windows {
                out.write_record([
                    s.source_id.to_string(),
                    win.window_index.to_string(),
                    win.packets_sent.to_string(),
                    win.packets_delivered_in_time.to_string(),
                    format!("{:.6}", win.p_del_hat),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Arrival { source: usize },
    BackoffDone { node: usize },
    TxEnd { node: usize },
}

#[derive(Clone, Copy, Debug)]
struct Packet {
    source: usize,
    serial: usize,
    created: u64,
    hop: usize,
}

#[derive(Clone, Copy, Debug)]
struct Service {
    packet: Packet,
    attempt: u32,
    nb: u32,
    be: u32,
    in_outage: bool,
}

#[derive(Clone, Copy, Debug)]
struct Exchange {
    tx: usize,
    rx: usize,
    end: u64,
    corrupted: bool,
}

struct Sim<'a> {
    cfg: &'a MacSimConfig,
    channel: &'a GroundTruthChannel,
    ids: Vec<NodeId>,
    pos: Vec<(f64, f64)>,
    routes: Vec<Vec<usize>>,
    sink: usize,
    queues: Vec<VecDeque<Packet>>,
    busy: Vec<Option<Service>>,
    active: Vec<Exchange>,
    events: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
    rng: ChaCha8Rng,
    outcomes: Vec<Vec<bool>>,
    deadline_ticks: u64,
}

impl Sim<'_> {
    fn ticks(&self, ms: f64) -> u64 {
        (ms / self.cfg.mac.symbol_ms).round() as u64
    }

    fn schedule(&mut self, at: u64, e: Event) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, e)));
    }

    fn in_range(&self, a: usize, b: usize) -> bool {
        let (pa, pb) = (self.pos[a], self.pos[b]);
        (pa.0 - pb.0).hypot(pa.1 - pb.1) <= self.cfg.cs_range_m
    }

    fn next_hop(&self, p: &Packet) -> usize {
        self.routes[p.source][p.hop + 1]
    }

    fn enqueue(&mut self, now: u64, node: usize, p: Packet) -> Result<(), FieldError> {
        self.queues[node].push_back(p);
        if self.busy[node].is_none() {
            self.start_next(now, node)?;
        }
        Ok(())
    }

    fn start_next(&mut self, now: u64, node: usize) -> Result<(), FieldError> {
        let Some(packet) = self.queues[node].pop_front() else {
            return Ok(());
        };
        let rx = self.next_hop(&packet);
        let rssi = self.channel.sample_rssi_with(self.ids[node], self.ids[rx], &mut self.rng)?;
        let in_outage = rssi < self.cfg.rssi_min_dbm;
        self.busy[node] = Some(Service { packet, attempt: 1, nb: 0, be: self.cfg.mac.backoff_exponent(1), in_outage });
        self.backoff(now, node);
        Ok(())
    }

    fn backoff(&mut self, now: u64, node: usize) {
        let be = self.busy[node].expect("serving").be;
        let slots = self.rng.random_range(0..(1u64 << be));
        let unit = self.ticks(self.cfg.mac.backoff_unit_ms);
        let cca = self.ticks(self.cfg.mac.cca_ms);
        self.schedule(now + slots * unit + cca, Event::BackoffDone { node });
    }

    fn new_attempt(&mut self, now: u64, node: usize) -> Result<(), FieldError> {
        let mut s = self.busy[node].expect("serving");
        if s.attempt >= self.cfg.mac.max_tx_attempts {
            self.outcomes[s.packet.source][s.packet.serial] = false;
            self.busy[node] = None;
            return self.start_next(now, node);
        }
        s.attempt += 1;
        s.nb = 0;
        s.be = self.cfg.mac.backoff_exponent(s.attempt);
        self.busy[node] = Some(s);
        self.backoff(now, node);
        Ok(())
    }

    fn on_backoff_done(&mut self, now: u64, node: usize) -> Result<(), FieldError> {
        let sensed_busy = self.active.iter().any(|x| x.tx != node && self.in_range(x.tx, node));
        if sensed_busy {
            let mut s = self.busy[node].expect("serving");
            s.nb += 1;
            s.be = (s.be + 1).min(self.cfg.mac.mac_max_be);
            self.busy[node] = Some(s);
            if s.nb > self.cfg.mac.max_csma_backoffs {
                return self.new_attempt(now, node);
            }
            self.backoff(now, node);
            return Ok(());
        }
        let s = self.busy[node].expect("serving");
        let rx = self.next_hop(&s.packet);
        let m = &self.cfg.mac;
        let end = now + self.ticks(m.frame_tx_ms + m.turnaround_ms + m.ack_ms);
        let mut corrupted = false;
        for i in 0..self.active.len() {
            let other = self.active[i];
            if self.in_range(node, other.rx) {
                self.active[i].corrupted = true;
            }
            if self.in_range(other.tx, rx) {
                corrupted = true;
            }
        }
        self.active.push(Exchange { tx: node, rx, end, corrupted });
        self.schedule(end, Event::TxEnd { node });
        Ok(())
    }

    fn on_tx_end(&mut self, now: u64, node: usize) -> Result<(), FieldError> {
        let i = self.active.iter().position(|x| x.tx == node && x.end == now).expect("active exchange");
        let ex = self.active.swap_remove(i);
        let s = self.busy[node].expect("serving");
        let per = if s.in_outage { self.cfg.per_below_threshold } else { self.cfg.q_max };
        let ok = !ex.corrupted && self.rng.random::<f64>() >= per;
        if !ok {
            return self.new_attempt(now, node);
        }
        self.busy[node] = None;
        let mut p = s.packet;
        p.hop += 1;
        if ex.rx == self.sink {
            self.outcomes[p.source][p.serial] = now - p.created <= self.deadline_ticks;
        } else {
            self.enqueue(now, ex.rx, p)?;
        }
        self.start_next(now, node)
    }
}

/// Simulates Poisson traffic at `arrival_rate_per_source` packets/s from
/// every source along its first route for `duration_s` seconds, then lets
/// the network drain.
pub fn run_mac_sim(
    channel: &GroundTruthChannel,
    design: &Design,
    arrival_rate_per_source: f64,
    duration_s: f64,
    qos: &QosSpec,
    cfg: &MacSimConfig,
) -> Result<DeliveryLog, FieldError> {
    if !(arrival_rate_per_source > 0.0) || !arrival_rate_per_source.is_finite() {
        return Err(FieldError::InvalidParams("arrival rate must be positive".into()));
    }
    if !(duration_s > 0.0) {
        return Err(FieldError::InvalidParams("duration must be positive".into()));
    }
    if cfg.window_packets == 0 {
        return Err(FieldError::InvalidParams("window must hold at least one packet".into()));
    }
    cfg.mac.validate().map_err(|e| FieldError::InvalidParams(e.to_string()))?;

    let ids: Vec<NodeId> = channel.positions().keys().copied().collect();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let idx = |v: &NodeId| index.get(v).copied().ok_or(FieldError::UnknownNode(*v));
    let sources: Vec<NodeId> = design.routes.keys().copied().collect();
    let mut routes = Vec::new();
    let mut sink = None;
    for s in &sources {
        let path = design.routes[s].first().ok_or(FieldError::InvalidParams(format!("source {s} has no route")))?;
        routes.push(path.iter().map(idx).collect::<Result<Vec<_>, _>>()?);
        sink = path.last().copied();
    }
    let Some(sink) = sink else {
        return Ok(DeliveryLog { window_packets: cfg.window_packets, sources: Vec::new() });
    };

    let n = ids.len();
    let mut sim = Sim {
        cfg,
        channel,
        pos: ids.iter().map(|v| channel.positions()[v]).collect(),
        sink: idx(&sink)?,
        ids,
        routes,
        queues: vec![VecDeque::new(); n],
        busy: vec![None; n],
        active: Vec::new(),
        events: BinaryHeap::new(),
        seq: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        outcomes: vec![Vec::new(); sources.len()],
        deadline_ticks: 0,
    };
    sim.deadline_ticks = (qos.d_max_ms / cfg.mac.symbol_ms + 1e-9).floor() as u64;
    let end = sim.ticks(duration_s * 1000.0);
    let gap = Exp::new(arrival_rate_per_source).map_err(|e| FieldError::InvalidParams(e.to_string()))?;
    let mut arrivals_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    arrivals_rng.set_stream(1);
    for source in 0..sources.len() {
        let t = sim.ticks(gap.sample(&mut arrivals_rng) * 1000.0);
        if t <= end {
            sim.schedule(t, Event::Arrival { source });
        }
    }

    while let Some(Reverse((now, _, e))) = sim.events.pop() {
        match e {
            Event::Arrival { source } => {
                let serial = sim.outcomes[source].len();
                sim.outcomes[source].push(false);
                let p = Packet { source, serial, created: now, hop: 0 };
                let node = sim.routes[source][0];
                sim.enqueue(now, node, p)?;
                let next = now + sim.ticks(gap.sample(&mut arrivals_rng) * 1000.0);
                if next <= end {
                    sim.schedule(next, Event::Arrival { source });
                }
            }
            Event::BackoffDone { node } => sim.on_backoff_done(now, node)?,
            Event::TxEnd { node } => sim.on_tx_end(now, node)?,
        }
    }

    let w = cfg.window_packets;
    let logs = sources
        .iter()
        .zip(&sim.outcomes)
        .map(|(&id, out)| {
            let delivered = out.iter().filter(|&&ok| ok).count();
            let windows = out
                .chunks_exact(w)
                .enumerate()
                .map(|(i, c)| {
                    let d = c.iter().filter(|&&ok| ok).count();
                    DeliveryWindow {
                        window_index: i,
                        packets_sent: w,
                        packets_delivered_in_time: d,
                        p_del_hat: d as f64 / w as f64,
                    }
                })
                .collect();
            SourceLog { source_id: id, packets_sent: out.len(), packets_delivered_in_time: delivered, windows }
        })
        .collect();
    Ok(DeliveryLog { window_packets: w, sources: logs })
}

/// Largest per-source rate at which every source still meets `qos.p_del`,
/// by bisection on `[0, hi]`. Each probe simulates about
/// `packets_per_source` packets per source with the same seed.
pub fn lambda_max(
    channel: &GroundTruthChannel,
    design: &Design,
    qos: &QosSpec,
    cfg: &MacSimConfig,
    hi: f64,
    packets_per_source: usize,
    iterations: u32,
) -> Result<f64, FieldError> {
    let meets = |rate: f64| -> Result<bool, FieldError> {
        let log = run_mac_sim(channel, design, rate, packets_per_source as f64 / rate, qos, cfg)?;
        Ok(log.sources.iter().all(|s| s.packets_sent > 0 && s.p_del_hat() >= qos.p_del))
    };
    let (mut lo, mut hi) = (0.0, hi);
    if meets(hi)? {
        return Ok(hi);
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if meets(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
