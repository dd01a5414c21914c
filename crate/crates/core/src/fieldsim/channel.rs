//! Log-distance path loss with per-pair shadowing, slow drift and
//! Gaussian (in dB) fast fading.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use super::FieldError;
use crate::linkmodel::{estimate_link_model, CampaignMeta, LinkModelEstimate, MeasurementTrace, NodePosition, TraceRecord};
use crate::scenario::NodeId;

/// RNG streams derived from the channel seed.
const STREAM_SHADOW: u64 = 1;
const STREAM_SAMPLES: u64 = 2;
const STREAM_DRIFT: u64 = 3;

/// Spacing between hello packets in generated traces.
const HELLO_INTERVAL_MS: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    #[serde(default)]
    pub tx_power_dbm: f64,
    pub pl0_db: f64,
    pub ref_dist_m: f64,
    pub path_loss_exp: f64,
    pub shadow_sigma_db: f64,
    pub fast_sigma_db: f64,
    /// Gauss–Markov correlation per drift step.
    pub drift_rho: f64,
    pub drift_sigma_db: f64,
    /// Packets weaker than this are not received at all.
    #[serde(default = "default_sensitivity")]
    pub sensitivity_dbm: f64,
    pub seed: u64,
}

fn default_sensitivity() -> f64 {
    -100.0
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), FieldError> {
        let finite = [self.tx_power_dbm, self.pl0_db, self.path_loss_exp, self.sensitivity_dbm];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::InvalidParams("non-finite channel parameter".into()));
        }
        if !(self.ref_dist_m > 0.0) {
            return Err(FieldError::InvalidParams("ref_dist_m must be positive".into()));
        }
        if !(self.shadow_sigma_db >= 0.0 && self.fast_sigma_db >= 0.0 && self.drift_sigma_db >= 0.0) {
            return Err(FieldError::InvalidParams("sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.drift_rho) {
            return Err(FieldError::InvalidParams("drift_rho must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Mean path loss at distance `d_m`.
    pub fn path_loss_db(&self, d_m: f64) -> f64 {
        self.pl0_db + 10.0 * self.path_loss_exp * (d_m / self.ref_dist_m).log10()
    }
}

/// Calibration campaign settings shipped with a preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub nodes: usize,
    pub hello_packets: u64,
    pub p_out_target: f64,
    pub p_bad_target: f64,
    pub bin_width_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelPreset {
    pub name: String,
    pub channel: ChannelParams,
    pub calibration: CalibrationSpec,
}

const INDOOR: &str = include_str!("../../presets/indoor.json");
const YARD: &str = include_str!("../../presets/yard.json");

impl ChannelPreset {
    pub fn names() -> &'static [&'static str] {
        &["indoor", "yard"]
    }

    /// Built-in preset by name.
    pub fn builtin(name: &str) -> Option<ChannelPreset> {
        let text = match name {
            "indoor" => INDOOR,
            "yard" => YARD,
            _ => return None,
        };
        Some(serde_json::from_str(text).expect("built-in presets parse"))
    }

    /// Runs the preset's calibration campaign on its own layout and
    /// estimates the link model from the trace.
    pub fn calibrate(&self, seed: u64, rssi_min_dbm: f64, q_max: f64) -> Result<LinkModelEstimate, FieldError> {
        let c = &self.calibration;
        let pos = calibration_layout(c.width_m, c.height_m, c.nodes, seed);
        let mut ch = GroundTruthChannel::new(self.channel.clone().with_seed(seed), pos)?;
        let all: BTreeSet<NodeId> = ch.positions().keys().copied().collect();
        let trace = ch.hello_campaign(&all, c.hello_packets, 0.0)?;
        let meta = ch.campaign_meta(&all, c.hello_packets);
        Ok(estimate_link_model(&trace, &meta, rssi_min_dbm, q_max, c.p_out_target, c.p_bad_target, c.bin_width_m)?)
    }

    /// A built-in name or a path to a preset JSON file.
    pub fn resolve(name_or_path: &str) -> Result<ChannelPreset, FieldError> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path))
            .map_err(|e| FieldError::InvalidParams(format!("preset {name_or_path}: {e}")))?;
        let p: ChannelPreset =
            serde_json::from_str(&text).map_err(|e| FieldError::InvalidParams(format!("preset {name_or_path}: {e}")))?;
        p.channel.validate()?;
        Ok(p)
    }
}

/// Jittered-grid layout of `n` nodes over a `width × height` area, ids `0..n`.
pub fn calibration_layout(width_m: f64, height_m: f64, n: usize, seed: u64) -> BTreeMap<NodeId, (f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = ((n as f64 * width_m / height_m).sqrt().ceil() as usize).max(1);
    let rows = n.div_ceil(cols);
    let (cw, ch) = (width_m / cols as f64, height_m / rows as f64);
    (0..n)
        .map(|i| {
            let (c, r) = (i % cols, i / cols);
            let x = (c as f64 + rng.random_range(0.1..0.9)) * cw;
            let y = (r as f64 + rng.random_range(0.1..0.9)) * ch;
            (NodeId(i as u32), (x, y))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct PairState {
    distance_m: f64,
    shadow_db: f64,
    drift_db: f64,
}

/// Directed outage counts from a fast (count-only) campaign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutageCount {
    pub tx_id: NodeId,
    pub rx_id: NodeId,
    pub n_sent: u64,
    pub n_good: u64,
}

impl OutageCount {
    pub fn p_out_hat(&self) -> f64 {
        1.0 - self.n_good as f64 / self.n_sent as f64
    }
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// The simulated field. Shadowing is drawn once per unordered pair, in
/// pair order, so a seed fixes the whole field. Serializes with its RNG
/// state, so a restored field continues exactly where it left off.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruthChannel {
    params: ChannelParams,
    positions: BTreeMap<NodeId, (f64, f64)>,
    #[serde(with = "pair_list")]
    pairs: BTreeMap<(NodeId, NodeId), PairState>,
    sample_rng: ChaCha8Rng,
    drift_rng: ChaCha8Rng,
    cycles: u64,
    hours: f64,
}

/// JSON objects cannot take tuple keys; pairs travel as a list.
mod pair_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::PairState;
    use crate::scenario::NodeId;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        a: NodeId,
        b: NodeId,
        #[serde(flatten)]
        state: PairState,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<(NodeId, NodeId), PairState>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter().map(|(&(a, b), &state)| Entry { a, b, state }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(NodeId, NodeId), PairState>, D::Error> {
        Ok(Vec::<Entry>::deserialize(d)?.into_iter().map(|e| ((e.a, e.b), e.state)).collect())
    }
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

impl GroundTruthChannel {
    pub fn new(params: ChannelParams, positions: BTreeMap<NodeId, (f64, f64)>) -> Result<Self, FieldError> {
        params.validate()?;
        let mut shadow_rng = stream(params.seed, STREAM_SHADOW);
        let shadow = Normal::new(0.0, params.shadow_sigma_db).map_err(|e| FieldError::InvalidParams(e.to_string()))?;
        let ids: Vec<NodeId> = positions.keys().copied().collect();
        let mut pairs = BTreeMap::new();
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                let (pa, pb) = (positions[&a], positions[&b]);
                pairs.insert(
                    (a, b),
                    PairState {
                        distance_m: (pa.0 - pb.0).hypot(pa.1 - pb.1),
                        shadow_db: shadow.sample(&mut shadow_rng),
                        drift_db: 0.0,
                    },
                );
            }
        }
        Ok(GroundTruthChannel {
            sample_rng: stream(params.seed, STREAM_SAMPLES),
            drift_rng: stream(params.seed, STREAM_DRIFT),
            params,
            positions,
            pairs,
            cycles: 0,
            hours: 0.0,
        })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn positions(&self) -> &BTreeMap<NodeId, (f64, f64)> {
        &self.positions
    }

    /// Drift steps applied so far.
    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn elapsed_hours(&self) -> f64 {
        self.hours
    }

    fn pair(&self, a: NodeId, b: NodeId) -> Result<&PairState, FieldError> {
        if a == b {
            return Err(FieldError::ZeroDistance(a, b));
        }
        self.pairs.get(&key(a, b)).ok_or(FieldError::UnknownPair(a, b))
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Result<f64, FieldError> {
        Ok(self.pair(a, b)?.distance_m)
    }

    pub fn shadowing(&self, a: NodeId, b: NodeId) -> Result<f64, FieldError> {
        Ok(self.pair(a, b)?.shadow_db)
    }

    pub fn drift(&self, a: NodeId, b: NodeId) -> Result<f64, FieldError> {
        Ok(self.pair(a, b)?.drift_db)
    }

    /// Overrides the static shadowing of `{a, b}`.
    pub fn set_shadowing(&mut self, a: NodeId, b: NodeId, shadow_db: f64) -> Result<(), FieldError> {
        self.pair(a, b)?;
        self.pairs.get_mut(&key(a, b)).expect("checked").shadow_db = shadow_db;
        Ok(())
    }

    /// Mean received power, identical in both directions.
    pub fn mean_rssi(&self, a: NodeId, b: NodeId) -> Result<f64, FieldError> {
        let p = self.pair(a, b)?;
        if p.distance_m <= 0.0 {
            return Err(FieldError::ZeroDistance(a, b));
        }
        Ok(self.params.tx_power_dbm - self.params.path_loss_db(p.distance_m) + p.shadow_db + p.drift_db)
    }

    /// Probability that one packet arrives below `rssi_min_dbm` (or is lost).
    pub fn outage_probability(&self, a: NodeId, b: NodeId, rssi_min_dbm: f64) -> Result<f64, FieldError> {
        let mu = self.mean_rssi(a, b)?;
        let threshold = rssi_min_dbm.max(self.params.sensitivity_dbm);
        if self.params.fast_sigma_db == 0.0 {
            return Ok(if mu < threshold { 1.0 } else { 0.0 });
        }
        let n = StatNormal::new(mu, self.params.fast_sigma_db).map_err(|e| FieldError::InvalidParams(e.to_string()))?;
        Ok(n.cdf(threshold))
    }

    /// One RSSI sample using a caller-owned generator.
    pub fn sample_rssi_with<R: Rng>(&self, a: NodeId, b: NodeId, rng: &mut R) -> Result<f64, FieldError> {
        let mu = self.mean_rssi(a, b)?;
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        Ok(mu + self.params.fast_sigma_db * z)
    }

    pub fn sample_rssi(&mut self, a: NodeId, b: NodeId) -> Result<f64, FieldError> {
        let mut rng = std::mem::replace(&mut self.sample_rng, ChaCha8Rng::seed_from_u64(0));
        let r = self.sample_rssi_with(a, b, &mut rng);
        self.sample_rng = rng;
        r
    }

    fn check_deployed(&self, deployed: &BTreeSet<NodeId>) -> Result<(), FieldError> {
        if deployed.len() < 2 {
            return Err(FieldError::TooFewNodes(deployed.len()));
        }
        match deployed.iter().find(|v| !self.positions.contains_key(v)) {
            Some(v) => Err(FieldError::UnknownNode(*v)),
            None => Ok(()),
        }
    }

    /// Every deployed node broadcasts `n_packets` hellos in turn; every other
    /// deployed node logs what it receives above the sensitivity floor.
    pub fn hello_campaign(
        &mut self,
        deployed: &BTreeSet<NodeId>,
        n_packets: u64,
        t_ms: f64,
    ) -> Result<MeasurementTrace, FieldError> {
        self.check_deployed(deployed)?;
        let floor = self.params.sensitivity_dbm;
        let mut records = Vec::new();
        let mut rng = std::mem::replace(&mut self.sample_rng, ChaCha8Rng::seed_from_u64(0));
        let mut slot = 0u64;
        for &tx in deployed {
            for seq in 0..n_packets {
                let time_ms = t_ms + slot as f64 * HELLO_INTERVAL_MS;
                slot += 1;
                for &rx in deployed {
                    if rx == tx {
                        continue;
                    }
                    let rssi = self.sample_rssi_with(tx, rx, &mut rng)?;
                    if rssi >= floor {
                        records.push(TraceRecord { tx_id: tx, rx_id: rx, seq, rssi_dbm: rssi, time_ms });
                    }
                }
            }
        }
        self.sample_rng = rng;
        Ok(MeasurementTrace::new(records))
    }

    /// Metadata matching a [`hello_campaign`](Self::hello_campaign) over `deployed`.
    pub fn campaign_meta(&self, deployed: &BTreeSet<NodeId>, n_packets: u64) -> CampaignMeta {
        CampaignMeta {
            n_sent: n_packets,
            overrides: Vec::new(),
            positions: deployed
                .iter()
                .filter_map(|id| self.positions.get(id).map(|&(x_m, y_m)| NodePosition { id: *id, x_m, y_m }))
                .collect(),
        }
    }

    /// Count-only campaign: the number of good packets on each directed
    /// link is drawn directly from its binomial distribution. Statistically
    /// identical to thresholding a full trace, without materialising it.
    pub fn outage_campaign(
        &mut self,
        deployed: &BTreeSet<NodeId>,
        n_packets: u64,
        rssi_min_dbm: f64,
    ) -> Result<Vec<OutageCount>, FieldError> {
        self.check_deployed(deployed)?;
        if n_packets == 0 {
            return Err(FieldError::InvalidParams("n_packets must be at least 1".into()));
        }
        let mut rng = std::mem::replace(&mut self.sample_rng, ChaCha8Rng::seed_from_u64(0));
        let mut out = Vec::new();
        for &tx in deployed {
            for &rx in deployed {
                if rx == tx {
                    continue;
                }
                let p_good = 1.0 - self.outage_probability(tx, rx, rssi_min_dbm)?;
                let n_good = Binomial::new(n_packets, p_good.clamp(0.0, 1.0))
                    .map_err(|e| FieldError::InvalidParams(e.to_string()))?
                    .sample(&mut rng);
                out.push(OutageCount { tx_id: tx, rx_id: rx, n_sent: n_packets, n_good });
            }
        }
        self.sample_rng = rng;
        Ok(out)
    }

    /// Applies `n_cycles` drift steps to every pair.
    pub fn advance_cycles(&mut self, n_cycles: u32, cycle_gap_hours: f64) {
        let rho = self.params.drift_rho;
        let scale = (1.0 - rho * rho).sqrt() * self.params.drift_sigma_db;
        for _ in 0..n_cycles {
            for p in self.pairs.values_mut() {
                let z: f64 = self.drift_rng.sample(rand_distr::StandardNormal);
                p.drift_db = rho * p.drift_db + scale * z;
            }
            self.cycles += 1;
            self.hours += cycle_gap_hours;
        }
    }
}
