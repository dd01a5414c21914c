//! Seeded random geometric instances.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relaynet_core::linkmodel::LinkModel;
use relaynet_core::qosmap::QosSpec;
use relaynet_core::scenario::{DeploymentScenario, Node, Role};

pub struct Geometric {
    pub scenario: DeploymentScenario,
    pub r_max: f64,
    pub h_max: u32,
    pub k: usize,
}

/// Sink near one corner, a few sources spread over a square, up to twelve
/// candidate relay spots.
pub fn geometric(seed: u64) -> Geometric {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = if rng.random_bool(0.5) { 1 } else { 2 };
    let side = rng.random_range(16.0..28.0);
    let r_max = 10.0;
    let n_sources = rng.random_range(2..=4);
    let n_relays = rng.random_range(6..=12);
    let mut nodes = vec![Node::new(0, rng.random_range(0.0..4.0), rng.random_range(0.0..4.0), Role::Sink)];
    for i in 0..n_sources {
        nodes.push(Node::new(1 + i, rng.random_range(0.0..side), rng.random_range(0.0..side), Role::Source));
    }
    for i in 0..n_relays {
        nodes.push(Node::new(
            100 + i,
            rng.random_range(0.0..side),
            rng.random_range(0.0..side),
            Role::PotentialRelay,
        ));
    }
    let h_max = rng.random_range(4..=6);
    let model = LinkModel::new(r_max, -88.0, 0.05, 0.05, 0.2).unwrap();
    Geometric { scenario: DeploymentScenario::new(nodes, QosSpec::new(200.0, 0.77, k as u32), model), r_max, h_max, k }
}
