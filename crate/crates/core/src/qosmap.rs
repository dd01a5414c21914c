//! QoS to hop-count mapping under the lone-packet model.
//!
//! The per-hop delay of a beaconless 802.15.4 CSMA/CA link with no
//! contention is a mixture over the number of transmission attempts: each
//! attempt draws a uniform backoff over `0..2^BE` unit periods, then spends
//! a fixed CCA + frame + turnaround + ACK time. All standard durations are
//! whole multiples of the 16 µs symbol, so the distribution is kept exactly
//! on the symbol lattice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Longest path searched when looking for the in-time hop bound.
pub const MAX_SEARCH_HOPS: u32 = 32;

pub const DEFAULT_IN_TIME_TARGET: f64 = 0.9999;

#[derive(Debug, Error, PartialEq)]
pub enum QosError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible QoS: hop bound {h_max} < 1 (in-time bound {h_max_1}, outage bound {h_max_2:?})")]
    Infeasible { h_max: u32, h_max_1: u32, h_max_2: Option<u32> },
}

fn default_in_time() -> f64 {
    DEFAULT_IN_TIME_TARGET
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosSpec {
    pub d_max_ms: f64,
    pub p_del: f64,
    pub k: u32,
    #[serde(default = "default_in_time")]
    pub in_time_target: f64,
}

impl QosSpec {
    pub fn new(d_max_ms: f64, p_del: f64, k: u32) -> Self {
        QosSpec { d_max_ms, p_del, k, in_time_target: DEFAULT_IN_TIME_TARGET }
    }

    pub fn validate(&self) -> Result<(), QosError> {
        if !(self.d_max_ms > 0.0) {
            return Err(QosError::InvalidArgument("d_max_ms must be positive".into()));
        }
        if !(self.p_del > 0.0 && self.p_del < 1.0) {
            return Err(QosError::InvalidArgument("p_del must lie in (0, 1)".into()));
        }
        if !(self.in_time_target > 0.0 && self.in_time_target < 1.0) {
            return Err(QosError::InvalidArgument("in_time_target must lie in (0, 1)".into()));
        }
        if self.p_del >= self.in_time_target {
            return Err(QosError::InvalidArgument("p_del must be below in_time_target".into()));
        }
        if self.k < 1 {
            return Err(QosError::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// 802.15.4 MAC timing. Defaults are the 2.4 GHz O-QPSK PHY at 250 kb/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacParams {
    /// Lattice step; every other duration is rounded onto it.
    pub symbol_ms: f64,
    pub backoff_unit_ms: f64,
    pub mac_min_be: u32,
    pub mac_max_be: u32,
    pub max_csma_backoffs: u32,
    pub max_tx_attempts: u32,
    /// 133-byte PHY frame.
    pub frame_tx_ms: f64,
    pub ack_ms: f64,
    pub turnaround_ms: f64,
    pub cca_ms: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            symbol_ms: 0.016,
            backoff_unit_ms: 0.32,
            mac_min_be: 3,
            mac_max_be: 5,
            max_csma_backoffs: 4,
            max_tx_attempts: 4,
            frame_tx_ms: 4.256,
            ack_ms: 0.352,
            turnaround_ms: 0.192,
            cca_ms: 0.128,
        }
    }
}

impl MacParams {
    fn steps(&self, ms: f64) -> usize {
        (ms / self.symbol_ms).round() as usize
    }

    /// Fixed time spent per attempt once the backoff expires.
    pub fn attempt_overhead_ms(&self) -> f64 {
        self.cca_ms + self.frame_tx_ms + self.turnaround_ms + self.ack_ms
    }

    /// Backoff exponent used on attempt `attempt` (1-based).
    pub fn backoff_exponent(&self, attempt: u32) -> u32 {
        (self.mac_min_be + attempt - 1).min(self.mac_max_be)
    }

    pub fn validate(&self) -> Result<(), QosError> {
        if !(self.symbol_ms > 0.0) || !(self.backoff_unit_ms > 0.0) {
            return Err(QosError::InvalidArgument("time steps must be positive".into()));
        }
        if self.max_tx_attempts < 1 {
            return Err(QosError::InvalidArgument("max_tx_attempts must be at least 1".into()));
        }
        if self.mac_min_be > self.mac_max_be || self.mac_max_be > 16 {
            return Err(QosError::InvalidArgument("backoff exponents out of range".into()));
        }
        Ok(())
    }
}

/// Per-hop delay distribution conditioned on eventual delivery, plus the
/// probability that the packet is dropped after exhausting its attempts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopDelayPmf {
    pub grid_ms: f64,
    /// `mass[i]` is the probability of a delay of exactly `i * grid_ms`.
    pub mass: Vec<f64>,
    pub drop_prob: f64,
}

impl HopDelayPmf {
    pub fn point_mass(grid_ms: f64, delay_ms: f64) -> Self {
        let i = (delay_ms / grid_ms).round() as usize;
        let mut mass = vec![0.0; i + 1];
        mass[i] = 1.0;
        HopDelayPmf { grid_ms, mass, drop_prob: 0.0 }
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean_ms(&self) -> f64 {
        self.mass.iter().enumerate().map(|(i, p)| i as f64 * self.grid_ms * p).sum()
    }

    /// `P(delay <= d_ms)`.
    pub fn cdf(&self, d_ms: f64) -> f64 {
        if d_ms < 0.0 {
            return 0.0;
        }
        let last = ((d_ms / self.grid_ms) + 1e-9).floor() as usize;
        self.mass.iter().take(last.saturating_add(1)).sum()
    }

    fn support(&self) -> Vec<(usize, f64)> {
        self.mass.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, &p)| (i, p)).collect()
    }
}

fn uniform_backoff_sum(mac: &MacParams, attempts: u32) -> Vec<f64> {
    let unit = mac.steps(mac.backoff_unit_ms);
    let mut dist = vec![1.0];
    for a in 1..=attempts {
        let w = 1usize << mac.backoff_exponent(a);
        let mut next = vec![0.0; dist.len() + (w - 1) * unit];
        let p = 1.0 / w as f64;
        for (i, &m) in dist.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for b in 0..w {
                next[i + b * unit] += m * p;
            }
        }
        dist = next;
    }
    dist
}

/// Exact per-hop delay PMF for a link with per-attempt error rate `q`.
pub fn hop_delay_pmf(q: f64, mac: &MacParams) -> Result<HopDelayPmf, QosError> {
    mac.validate()?;
    if !(0.0..1.0).contains(&q) {
        return Err(QosError::InvalidArgument(format!("PER {q} must lie in [0, 1)")));
    }
    let n = mac.max_tx_attempts;
    let drop_prob = q.powi(n as i32);
    let overhead = mac.steps(mac.attempt_overhead_ms());
    let mut mass: Vec<f64> = Vec::new();
    for j in 1..=n {
        let p_j = (1.0 - q) * q.powi(j as i32 - 1) / (1.0 - drop_prob);
        if p_j == 0.0 {
            continue;
        }
        let backoff = uniform_backoff_sum(mac, j);
        let offset = j as usize * overhead;
        if mass.len() < offset + backoff.len() {
            mass.resize(offset + backoff.len(), 0.0);
        }
        for (i, &b) in backoff.iter().enumerate() {
            mass[offset + i] += p_j * b;
        }
    }
    Ok(HopDelayPmf { grid_ms: mac.symbol_ms, mass, drop_prob })
}

fn convolve_sparse(dense: &[f64], sparse: &[(usize, f64)], limit: Option<usize>) -> Vec<f64> {
    let max_shift = sparse.last().map(|s| s.0).unwrap_or(0);
    let mut len = dense.len() + max_shift;
    if let Some(l) = limit {
        len = len.min(l + 1);
    }
    let mut out = vec![0.0; len];
    for (i, &a) in dense.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for &(j, b) in sparse {
            let k = i + j;
            if k >= len {
                break;
            }
            out[k] += a * b;
        }
    }
    out
}

/// `h`-fold convolution of a per-hop PMF. The drop probability composes as
/// independent per-hop drops.
pub fn convolve_hops(pmf: &HopDelayPmf, h: u32) -> Result<HopDelayPmf, QosError> {
    if h < 1 {
        return Err(QosError::InvalidArgument("h must be at least 1".into()));
    }
    let support = pmf.support();
    let mut acc = pmf.mass.clone();
    for _ in 1..h {
        acc = convolve_sparse(&acc, &support, None);
    }
    Ok(HopDelayPmf {
        grid_ms: pmf.grid_ms,
        mass: acc,
        drop_prob: 1.0 - (1.0 - pmf.drop_prob).powi(h as i32),
    })
}

/// `D^(h)(d_ms)` for `h = 1..=max_h`, computed incrementally on a lattice
/// truncated at `d_ms` (mass beyond the deadline never comes back).
pub fn in_time_series(pmf: &HopDelayPmf, d_ms: f64, max_h: u32) -> Vec<f64> {
    if d_ms < 0.0 {
        return vec![0.0; max_h as usize];
    }
    let limit = ((d_ms / pmf.grid_ms) + 1e-9).floor() as usize;
    let support = pmf.support();
    let mut acc: Vec<f64> = pmf.mass.iter().take(limit + 1).copied().collect();
    let mut out = Vec::with_capacity(max_h as usize);
    for h in 1..=max_h {
        if h > 1 {
            acc = convolve_sparse(&acc, &support, Some(limit));
        }
        out.push(acc.iter().sum::<f64>().min(1.0));
    }
    out
}

/// `D^(h)_q(d_ms)`: probability an undropped packet crosses `h` hops in time.
pub fn in_time_probability(q: f64, h: u32, d_ms: f64, mac: &MacParams) -> Result<f64, QosError> {
    if h < 1 {
        return Err(QosError::InvalidArgument("h must be at least 1".into()));
    }
    let pmf = hop_delay_pmf(q, mac)?;
    Ok(in_time_series(&pmf, d_ms, h)[h as usize - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopBound {
    pub h_max: u32,
    /// Largest hop count whose in-time probability meets the target.
    pub h_max_1: u32,
    /// Outage-driven bound; `None` when link outage is zero (unbounded).
    pub h_max_2: Option<u32>,
}

/// `floor(ln(p_del / in_time) / ln(1 - p_out))`, or `None` when `p_out == 0`.
pub fn outage_hop_bound(p_out: f64, p_del: f64, in_time_target: f64) -> Option<u32> {
    if p_out <= 0.0 {
        return None;
    }
    let x = (p_del / in_time_target).ln() / (1.0 - p_out).ln();
    Some((x + 1e-9).floor().max(0.0) as u32)
}

/// Maps `(q_max, d_max, P_out, p_del)` to the per-path hop bound.
pub fn hop_bound(
    q_max: f64,
    d_max_ms: f64,
    p_out: f64,
    p_del: f64,
    in_time_target: f64,
    mac: &MacParams,
) -> Result<HopBound, QosError> {
    QosSpec { d_max_ms, p_del, k: 1, in_time_target }.validate()?;
    if !(0.0..1.0).contains(&p_out) {
        return Err(QosError::InvalidArgument("p_out must lie in [0, 1)".into()));
    }
    let pmf = hop_delay_pmf(q_max, mac)?;
    let series = in_time_series(&pmf, d_max_ms, MAX_SEARCH_HOPS);
    // D^(h) is non-increasing in h, so the first miss ends the search.
    let h_max_1 = series.iter().take_while(|&&d| d >= in_time_target).count() as u32;
    let h_max_2 = outage_hop_bound(p_out, p_del, in_time_target);
    let h_max = match h_max_2 {
        Some(h2) => h_max_1.min(h2),
        None => h_max_1,
    };
    if h_max < 1 {
        return Err(QosError::Infeasible { h_max, h_max_1, h_max_2 });
    }
    Ok(HopBound { h_max, h_max_1, h_max_2 })
}

/// Lower bound on hop count from the triangle inequality.
pub fn min_hops_for_distance(distance_m: f64, r_max_m: f64) -> u32 {
    (distance_m / r_max_m - 1e-9).ceil().max(1.0) as u32
}

/// Predicted delay-bounded delivery probability of a path whose links have
/// the given outage probabilities and PER `q_max` when not in outage.
pub fn predict_path_pdel(
    per_link_outage: &[f64],
    q_max: f64,
    d_max_ms: f64,
    mac: &MacParams,
) -> Result<f64, QosError> {
    if per_link_outage.is_empty() {
        return Err(QosError::InvalidArgument("path must have at least one hop".into()));
    }
    if per_link_outage.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(QosError::InvalidArgument("outage probabilities must lie in [0, 1]".into()));
    }
    let h = per_link_outage.len() as u32;
    let pmf = hop_delay_pmf(q_max, mac)?;
    let in_time = in_time_series(&pmf, d_max_ms, h)[h as usize - 1];
    Ok(path_pdel_with(per_link_outage, pmf.drop_prob, in_time))
}

/// Closed form with precomputed drop and in-time terms.
pub fn path_pdel_with(per_link_outage: &[f64], drop_prob: f64, in_time: f64) -> f64 {
    let h = per_link_outage.len() as i32;
    let up: f64 = per_link_outage.iter().map(|p| 1.0 - p).product();
    up * (1.0 - drop_prob).powi(h) * in_time
}

/// Caches `D^(h)(d)` for one `(q, d)` so many paths can be scored cheaply.
#[derive(Clone, Debug)]
pub struct PathPredictor {
    pub q_max: f64,
    pub d_max_ms: f64,
    drop_prob: f64,
    in_time: Vec<f64>,
}

impl PathPredictor {
    pub fn new(q_max: f64, d_max_ms: f64, mac: &MacParams) -> Result<Self, QosError> {
        let pmf = hop_delay_pmf(q_max, mac)?;
        let in_time = in_time_series(&pmf, d_max_ms, MAX_SEARCH_HOPS * 2);
        Ok(PathPredictor { q_max, d_max_ms, drop_prob: pmf.drop_prob, in_time })
    }

    pub fn in_time(&self, h: usize) -> f64 {
        if h == 0 {
            return 1.0;
        }
        self.in_time.get(h - 1).copied().unwrap_or(0.0)
    }

    pub fn predict(&self, per_link_outage: &[f64]) -> f64 {
        if per_link_outage.is_empty() {
            return 0.0;
        }
        path_pdel_with(per_link_outage, self.drop_prob, self.in_time(per_link_outage.len()))
    }
}
