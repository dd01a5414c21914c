//! Ready-made scenarios and fields for experiments and tests.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fieldsim::{ChannelParams, GroundTruthChannel};
use crate::linkmodel::LinkModel;
use crate::qosmap::QosSpec;
use crate::scenario::{DeploymentScenario, Node, NodeId, Role};

/// `R_max = r`, threshold −88 dBm, q = 0.05, outage target 0.05.
pub fn model_r(r: f64) -> LinkModel {
    LinkModel::new(r, -88.0, 0.05, 0.05, 0.2).expect("valid constants")
}

fn small(nodes: Vec<Node>) -> DeploymentScenario {
    DeploymentScenario::new(nodes, QosSpec::new(200.0, 0.77, 1), model_r(8.0))
}

/// sink (0,0); relays at 5, 10, 15 m; source at 20 m.
pub fn line5() -> DeploymentScenario {
    small(vec![
        Node::new(0, 0.0, 0.0, Role::Sink),
        Node::new(5, 5.0, 0.0, Role::PotentialRelay),
        Node::new(10, 10.0, 0.0, Role::PotentialRelay),
        Node::new(15, 15.0, 0.0, Role::PotentialRelay),
        Node::new(20, 20.0, 0.0, Role::Source),
    ])
}

/// Two sources, each reaching the sink through its own relay; relay 3 is
/// a spare location near source 9 that no initial design needs.
pub fn two_route() -> DeploymentScenario {
    small(vec![
        Node::new(0, 0.0, 0.0, Role::Sink),
        Node::new(1, 6.0, 4.5, Role::PotentialRelay),
        Node::new(2, 6.0, -4.5, Role::PotentialRelay),
        Node::new(3, 9.0, 0.0, Role::PotentialRelay),
        Node::new(8, 12.0, -4.5, Role::Source),
        Node::new(9, 12.0, 4.5, Role::Source),
    ])
}

/// Central sink plus 24 locations on a jittered 5 m grid over roughly
/// 30 × 20 m. Every location starts as a potential relay; pick sources with
/// [`DeploymentScenario::with_sources`] or pass them here.
pub fn indoor24(sources: &[NodeId]) -> DeploymentScenario {
    let mut nodes = vec![Node::new(0, 15.0, 10.0, Role::Sink)];
    for i in 0..24u32 {
        let (col, row) = (i % 6, i / 6);
        let jx = ((i * 37 + 5) % 11) as f64 / 10.0 - 0.5;
        let jy = ((i * 53 + 3) % 13) as f64 / 12.0 - 0.5;
        let id = i + 1;
        let role = if sources.contains(&NodeId(id)) { Role::Source } else { Role::PotentialRelay };
        nodes.push(Node::new(id, 2.5 + 5.0 * col as f64 + 1.6 * jx, 2.5 + 5.0 * row as f64 + 1.6 * jy, role));
    }
    small(nodes)
}

/// Ten source sets of four for [`indoor24`], drawn from the perimeter.
pub fn indoor24_source_sets() -> Vec<Vec<NodeId>> {
    const SETS: [[u32; 4]; 10] = [
        [1, 6, 19, 24],
        [2, 12, 19, 23],
        [1, 5, 18, 20],
        [3, 7, 22, 24],
        [6, 13, 21, 2],
        [4, 12, 19, 1],
        [5, 7, 24, 20],
        [2, 18, 13, 23],
        [1, 12, 22, 3],
        [6, 7, 21, 19],
    ];
    SETS.iter().map(|s| s.iter().map(|&i| NodeId(i)).collect()).collect()
}

/// A shadowing-free field whose outage steps from good to bad just above
/// `r_max`: about 0.6 % outage at `r_max`, about a third at `1.125 r_max`.
pub fn model_matching_channel(r_max: f64, seed: u64) -> ChannelParams {
    let (n, fast) = (4.0, 1.0);
    let tx = 0.0;
    // Mean RSSI at r_max sits 2.5 σ above the −88 dBm threshold.
    let pl0 = tx + 88.0 - 2.5 * fast - 10.0 * n * r_max.log10();
    ChannelParams {
        tx_power_dbm: tx,
        pl0_db: pl0,
        ref_dist_m: 1.0,
        path_loss_exp: n,
        shadow_sigma_db: 0.0,
        fast_sigma_db: fast,
        drift_rho: 0.9,
        drift_sigma_db: 0.0,
        sensitivity_dbm: -100.0,
        seed,
    }
}

pub fn model_truth_channel(s: &DeploymentScenario, r_max: f64, seed: u64) -> GroundTruthChannel {
    GroundTruthChannel::new(model_matching_channel(r_max, seed), s.positions()).expect("fixture positions are distinct")
}

/// A model-matching field in which a `fraction` of the pairs within
/// `r_max` are blocked by a −40 dB shadowing term.
pub fn bad_fraction_channel(s: &DeploymentScenario, r_max: f64, fraction: f64, seed: u64) -> GroundTruthChannel {
    let mut ch = model_truth_channel(s, r_max, seed);
    let mut pairs = Vec::new();
    for (i, a) in s.nodes.iter().enumerate() {
        for b in &s.nodes[i + 1..] {
            if a.distance_to(b) <= r_max {
                pairs.push((a.id, b.id));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba0d);
    pairs.shuffle(&mut rng);
    let n_bad = (fraction * pairs.len() as f64).round() as usize;
    for &(a, b) in &pairs[..n_bad] {
        ch.set_shadowing(a, b, -40.0).expect("pair exists");
    }
    ch
}
