//! Link-model estimation from hello-packet RSSI traces.
//!
//! A campaign produces, for every ordered pair of nodes, the RSSI of each
//! received hello packet. A packet counts as "not in outage" when its RSSI
//! is at or above `RSSI_min`; lost packets count as outage samples. Links
//! are binned by length and the fraction of bad links per bin gives the
//! `p_bad` curve from which `R_max` is selected.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::NodeId;

/// Bins with fewer links than this are flagged in reports.
pub const LOW_CONFIDENCE_LINKS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum LinkModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("pair {tx}->{rx} has {records} records but only {n_sent} packets were sent")]
    NSentTooSmall { tx: NodeId, rx: NodeId, records: usize, n_sent: u64 },
    #[error("no link statistics to bin")]
    EmptyStats,
    #[error("no feasible range: the shortest bin already violates the p_bad target")]
    NoFeasibleRange,
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkQuality {
    Good,
    Bad,
}

/// Packets received at or above the threshold have a small, stable PER.
pub fn per_threshold_classify(rssi_dbm: f64, rssi_min_dbm: f64) -> LinkQuality {
    if rssi_dbm >= rssi_min_dbm {
        LinkQuality::Good
    } else {
        LinkQuality::Bad
    }
}

/// One logged hello packet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tx_id: NodeId,
    pub rx_id: NodeId,
    pub seq: u64,
    pub rssi_dbm: f64,
    pub time_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementTrace {
    pub records: Vec<TraceRecord>,
}

impl MeasurementTrace {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        MeasurementTrace { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks `tx != rx` and that sequence numbers never go backwards in
    /// time for a given ordered pair.
    pub fn validate(&self) -> Result<(), LinkModelError> {
        let mut last: HashMap<(NodeId, NodeId), (f64, u64)> = HashMap::new();
        let mut order: Vec<&TraceRecord> = self.records.iter().collect();
        order.sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms));
        for r in order {
            if r.tx_id == r.rx_id {
                return Err(LinkModelError::InvalidTrace(format!("self-link record at node {}", r.tx_id)));
            }
            if let Some(&(_, seq)) = last.get(&(r.tx_id, r.rx_id)) {
                if r.seq < seq {
                    return Err(LinkModelError::InvalidTrace(format!(
                        "sequence numbers decrease on {}->{}",
                        r.tx_id, r.rx_id
                    )));
                }
            }
            last.insert((r.tx_id, r.rx_id), (r.time_ms, r.seq));
        }
        Ok(())
    }

    /// Reads the `tx_id,rx_id,seq,rssi_dbm,time_ms` CSV format.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, LinkModelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let r: TraceRecord = row.map_err(|e| LinkModelError::Csv(e.to_string()))?;
            records.push(r);
        }
        let t = MeasurementTrace { records };
        t.validate()?;
        Ok(t)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), LinkModelError> {
        let mut wtr = csv::Writer::from_writer(writer);
        for r in &self.records {
            wtr.serialize(r).map_err(|e| LinkModelError::Csv(e.to_string()))?;
        }
        wtr.flush().map_err(|e| LinkModelError::Csv(e.to_string()))?;
        Ok(())
    }

    /// Groups RSSI samples by ordered pair.
    pub fn index(&self) -> TraceIndex {
        let mut by_pair: BTreeMap<(NodeId, NodeId), Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            by_pair.entry((r.tx_id, r.rx_id)).or_default().push(r.rssi_dbm);
        }
        TraceIndex { by_pair }
    }
}

/// RSSI samples per ordered (tx, rx) pair.
#[derive(Clone, Debug, Default)]
pub struct TraceIndex {
    by_pair: BTreeMap<(NodeId, NodeId), Vec<f64>>,
}

impl TraceIndex {
    pub fn samples(&self, tx: NodeId, rx: NodeId) -> &[f64] {
        self.by_pair.get(&(tx, rx)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.by_pair.keys().copied()
    }
}

/// Outage statistics of one directed link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    pub tx_id: NodeId,
    pub rx_id: NodeId,
    pub length_m: f64,
    pub n_sent: u64,
    pub n_received: u64,
    pub rssi_samples: Vec<f64>,
    pub p_out_hat: f64,
}

impl LinkStats {
    pub fn with_length(mut self, length_m: f64) -> Self {
        self.length_m = length_m;
        self
    }
}

fn stats_from_samples(
    tx: NodeId,
    rx: NodeId,
    samples: &[f64],
    n_sent: u64,
    rssi_min_dbm: f64,
) -> Result<LinkStats, LinkModelError> {
    if n_sent == 0 {
        return Err(LinkModelError::InvalidArgument("n_sent must be at least 1".into()));
    }
    if samples.len() as u64 > n_sent {
        return Err(LinkModelError::NSentTooSmall { tx, rx, records: samples.len(), n_sent });
    }
    let good = samples
        .iter()
        .filter(|&&r| per_threshold_classify(r, rssi_min_dbm) == LinkQuality::Good)
        .count() as u64;
    Ok(LinkStats {
        tx_id: tx,
        rx_id: rx,
        length_m: 0.0,
        n_sent,
        n_received: samples.len() as u64,
        rssi_samples: samples.to_vec(),
        p_out_hat: 1.0 - good as f64 / n_sent as f64,
    })
}

/// Estimates the outage probability of the directed link `pair`.
///
/// Missing packets count toward outage, so `p_out_hat` is one minus the
/// fraction of *sent* packets received at `rssi >= rssi_min_dbm`.
pub fn estimate_link_outage(
    trace: &MeasurementTrace,
    pair: (NodeId, NodeId),
    n_sent: u64,
    rssi_min_dbm: f64,
) -> Result<LinkStats, LinkModelError> {
    let samples: Vec<f64> = trace
        .records
        .iter()
        .filter(|r| r.tx_id == pair.0 && r.rx_id == pair.1)
        .map(|r| r.rssi_dbm)
        .collect();
    stats_from_samples(pair.0, pair.1, &samples, n_sent, rssi_min_dbm)
}

/// Per-campaign metadata: how many hello packets each transmitter sent and
/// where the nodes were.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignMeta {
    /// Packets sent per ordered pair unless overridden.
    pub n_sent: u64,
    #[serde(default)]
    pub overrides: Vec<NSentOverride>,
    pub positions: Vec<NodePosition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSentOverride {
    pub tx_id: NodeId,
    pub rx_id: NodeId,
    pub n_sent: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodePosition {
    pub id: NodeId,
    pub x_m: f64,
    pub y_m: f64,
}

impl CampaignMeta {
    pub fn n_sent_for(&self, tx: NodeId, rx: NodeId) -> u64 {
        self.overrides
            .iter()
            .find(|o| o.tx_id == tx && o.rx_id == rx)
            .map(|o| o.n_sent)
            .unwrap_or(self.n_sent)
    }

    fn position_map(&self) -> BTreeMap<NodeId, (f64, f64)> {
        self.positions.iter().map(|p| (p.id, (p.x_m, p.y_m))).collect()
    }
}

/// Directed statistics for every ordered pair of nodes listed in `meta`.
/// Pairs that never heard each other appear with `p_out_hat = 1`.
pub fn estimate_all_links(
    trace: &MeasurementTrace,
    meta: &CampaignMeta,
    rssi_min_dbm: f64,
) -> Result<Vec<LinkStats>, LinkModelError> {
    let index = trace.index();
    let pos = meta.position_map();
    for (tx, rx) in index.pairs() {
        if !pos.contains_key(&tx) || !pos.contains_key(&rx) {
            return Err(LinkModelError::InvalidTrace(format!(
                "pair {tx}->{rx} has no position in campaign metadata"
            )));
        }
    }
    let mut out = Vec::new();
    for (&tx, &(tx_x, tx_y)) in &pos {
        for (&rx, &(rx_x, rx_y)) in &pos {
            if tx == rx {
                continue;
            }
            let s = stats_from_samples(tx, rx, index.samples(tx, rx), meta.n_sent_for(tx, rx), rssi_min_dbm)?;
            out.push(s.with_length((tx_x - rx_x).hypot(tx_y - rx_y)));
        }
    }
    Ok(out)
}

/// Collapses directed statistics into one record per unordered pair using
/// the worse of the two directions.
pub fn merge_bidirectional(stats: &[LinkStats]) -> Vec<LinkStats> {
    let mut merged: BTreeMap<(NodeId, NodeId), LinkStats> = BTreeMap::new();
    for s in stats {
        let key = if s.tx_id <= s.rx_id { (s.tx_id, s.rx_id) } else { (s.rx_id, s.tx_id) };
        match merged.get_mut(&key) {
            Some(prev) if prev.p_out_hat >= s.p_out_hat => {}
            Some(prev) => *prev = s.clone(),
            None => {
                merged.insert(key, s.clone());
            }
        }
    }
    merged.into_values().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PBadBin {
    #[serde(rename = "bin_m")]
    pub length_m: f64,
    pub n_links: usize,
    pub p_bad: f64,
    #[serde(default)]
    pub low_confidence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PBadCurve {
    pub bin_width_m: f64,
    pub bins: Vec<PBadBin>,
}

fn bin_index(length_m: f64, bin_width_m: f64) -> i64 {
    (length_m / bin_width_m).round() as i64
}

/// Bins links by length (rounded to the nearest bin center) and reports
/// the fraction of links per bin whose outage exceeds `p_out_target`.
pub fn build_pbad_curve(
    stats: &[LinkStats],
    p_out_target: f64,
    bin_width_m: f64,
) -> Result<PBadCurve, LinkModelError> {
    if stats.is_empty() {
        return Err(LinkModelError::EmptyStats);
    }
    if !(bin_width_m > 0.0) {
        return Err(LinkModelError::InvalidArgument("bin width must be positive".into()));
    }
    let mut counts: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for s in stats {
        if !(s.length_m > 0.0) {
            return Err(LinkModelError::InvalidArgument(format!(
                "link {}->{} has non-positive length",
                s.tx_id, s.rx_id
            )));
        }
        let e = counts.entry(bin_index(s.length_m, bin_width_m)).or_default();
        e.0 += 1;
        if s.p_out_hat <= p_out_target {
            e.1 += 1;
        }
    }
    let bins = counts
        .into_iter()
        .map(|(b, (n, good))| PBadBin {
            length_m: b as f64 * bin_width_m,
            n_links: n,
            p_bad: 1.0 - good as f64 / n as f64,
            low_confidence: n < LOW_CONFIDENCE_LINKS,
        })
        .collect();
    Ok(PBadCurve { bin_width_m, bins })
}

/// Largest bin length reached before the first bin whose `p_bad` exceeds
/// the target.
pub fn select_rmax(curve: &PBadCurve, p_bad_target: f64) -> Result<f64, LinkModelError> {
    if curve.bins.is_empty() {
        return Err(LinkModelError::EmptyStats);
    }
    let mut best = None;
    for bin in &curve.bins {
        if bin.p_bad > p_bad_target {
            break;
        }
        best = Some(bin.length_m);
    }
    match best {
        Some(r) if r > 0.0 => Ok(r),
        _ => Err(LinkModelError::NoFeasibleRange),
    }
}

/// A link is good only if the outage target holds in both directions.
pub fn classify_bidirectional(fwd: &LinkStats, rev: &LinkStats, p_out_target: f64) -> LinkQuality {
    classify_outages(fwd.p_out_hat, rev.p_out_hat, p_out_target)
}

pub fn classify_outages(p_fwd: f64, p_rev: f64, p_out_target: f64) -> LinkQuality {
    if p_fwd <= p_out_target && p_rev <= p_out_target {
        LinkQuality::Good
    } else {
        LinkQuality::Bad
    }
}

/// The distilled channel model used by the topology designer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub r_max_m: f64,
    pub rssi_min_dbm: f64,
    pub q_max: f64,
    pub p_out_target: f64,
    pub p_bad_target: f64,
}

impl LinkModel {
    pub fn new(
        r_max_m: f64,
        rssi_min_dbm: f64,
        q_max: f64,
        p_out_target: f64,
        p_bad_target: f64,
    ) -> Result<Self, LinkModelError> {
        let m = LinkModel { r_max_m, rssi_min_dbm, q_max, p_out_target, p_bad_target };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), LinkModelError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !(self.r_max_m > 0.0) {
            return Err(LinkModelError::InvalidArgument("r_max_m must be positive".into()));
        }
        if !open(self.q_max) || !open(self.p_out_target) || !open(self.p_bad_target) {
            return Err(LinkModelError::InvalidArgument("probabilities must lie in (0, 1)".into()));
        }
        if !self.rssi_min_dbm.is_finite() {
            return Err(LinkModelError::InvalidArgument("rssi_min_dbm must be finite".into()));
        }
        Ok(())
    }
}

/// Output of the full trace-to-model pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModelEstimate {
    pub model: LinkModel,
    pub curve: PBadCurve,
}

/// Trace → per-link outage → unordered worst-case → `p_bad` curve → `R_max`.
pub fn estimate_link_model(
    trace: &MeasurementTrace,
    meta: &CampaignMeta,
    rssi_min_dbm: f64,
    q_max: f64,
    p_out_target: f64,
    p_bad_target: f64,
    bin_width_m: f64,
) -> Result<LinkModelEstimate, LinkModelError> {
    let directed = estimate_all_links(trace, meta, rssi_min_dbm)?;
    let links = merge_bidirectional(&directed);
    let curve = build_pbad_curve(&links, p_out_target, bin_width_m)?;
    let r_max = select_rmax(&curve, p_bad_target)?;
    let model = LinkModel::new(r_max, rssi_min_dbm, q_max, p_out_target, p_bad_target)?;
    Ok(LinkModelEstimate { model, curve })
}
