//! Nine-node deployments for comparing static and dynamic routing.

use crate::designer::fixtures::{model_matching_channel, model_r};
use crate::designer::{CampaignMode, DesignerError, SessionState, SimulatedField};
use crate::fieldsim::{ChannelParams, GroundTruthChannel};
use crate::qosmap::QosSpec;
use crate::scenario::{DeploymentScenario, Node, NodeId, Role};

use super::{LinkEvent, OperatedNetwork, RoutingError};

/// Scenario plus field for one routing experiment.
#[derive(Clone, Debug)]
pub struct RoutingFixture {
    pub scenario: DeploymentScenario,
    pub channel: ChannelParams,
    /// Shadowing terms in place before deployment.
    pub initial_shadowing: Vec<(NodeId, NodeId, f64)>,
    /// Changes applied while the network operates.
    pub events: Vec<LinkEvent>,
}

/// Two clusters of two sources, each source seeing two relays that both
/// reach the sink; a two-route design needs all four relays.
pub fn rpl_k2() -> RoutingFixture {
    let nodes = vec![
        Node::new(0, 0.0, 0.0, Role::Sink),
        Node::new(1, 11.0, 2.0, Role::Source),
        Node::new(2, 11.0, -2.0, Role::Source),
        Node::new(3, -11.0, 2.0, Role::Source),
        Node::new(4, -11.0, -2.0, Role::Source),
        Node::new(11, 6.0, 3.0, Role::PotentialRelay),
        Node::new(12, 6.0, -3.0, Role::PotentialRelay),
        Node::new(13, -6.0, 3.0, Role::PotentialRelay),
        Node::new(14, -6.0, -3.0, Role::PotentialRelay),
    ];
    let mut channel = model_matching_channel(8.0, 1);
    // Graded links: 4 dB fast fading with 5 % outage at R_max.
    channel.fast_sigma_db = 4.0;
    channel.pl0_db = 88.0 - 1.645 * 4.0 - 40.0 * 8f64.log10();
    channel.drift_sigma_db = 3.0;
    RoutingFixture {
        scenario: DeploymentScenario::new(nodes, QosSpec::new(200.0, 0.77, 2), model_r(8.0)),
        channel,
        initial_shadowing: Vec::new(),
        events: Vec::new(),
    }
}

/// Time at which [`rpl_k1`] loses its link.
pub const K1_SEVER_TIME_S: f64 = 86_400.0;

/// Four spokes of source and relay. On day two relay 11 loses the sink
/// while its link to relay 12, bad when the network was deployed, turns
/// good: a QoS path survives, but not through any potential parent.
pub fn rpl_k1() -> RoutingFixture {
    let nodes = vec![
        Node::new(0, 0.0, 0.0, Role::Sink),
        Node::new(1, 12.0, 0.0, Role::Source),
        Node::new(2, 0.0, 12.0, Role::Source),
        Node::new(3, -12.0, 0.0, Role::Source),
        Node::new(4, 0.0, -12.0, Role::Source),
        Node::new(11, 6.0, 0.0, Role::PotentialRelay),
        Node::new(12, 0.0, 6.0, Role::PotentialRelay),
        Node::new(13, -6.0, 0.0, Role::PotentialRelay),
        Node::new(14, 0.0, -6.0, Role::PotentialRelay),
    ];
    let ev = |a: u32, b: u32, db: f64| LinkEvent { time_s: K1_SEVER_TIME_S, a: NodeId(a), b: NodeId(b), shadow_db: db };
    RoutingFixture {
        scenario: DeploymentScenario::new(nodes, QosSpec::new(200.0, 0.77, 1), model_r(8.0)),
        channel: model_matching_channel(8.0, 1),
        initial_shadowing: vec![(NodeId(11), NodeId(12), -10.0)],
        events: vec![ev(11, 0, -40.0), ev(11, 12, 6.0)],
    }
}

impl RoutingFixture {
    /// The field with the initial shadowing applied, seeded by `seed`.
    pub fn field(&self, seed: u64) -> GroundTruthChannel {
        let mut ch = GroundTruthChannel::new(self.channel.clone().with_seed(seed), self.scenario.positions())
            .expect("fixture positions are distinct");
        for &(a, b, db) in &self.initial_shadowing {
            ch.set_shadowing(a, b, db).expect("fixture pair");
        }
        ch
    }

    /// Designs and deploys with the iterative loop; returns the finished
    /// session and the field as it stands after deployment.
    pub fn deploy(&self, seed: u64) -> Result<(SessionState, GroundTruthChannel), DesignerError> {
        let mut field = SimulatedField::new(self.field(seed), 2000, -88.0, CampaignMode::Counts);
        let mut sess = SessionState::new(self.scenario.clone(), model_r(8.0))?;
        sess.iterate_until_feasible(&mut field, None)?;
        Ok((sess, field.channel))
    }

    pub fn network(&self, seed: u64) -> Result<(OperatedNetwork, GroundTruthChannel), RoutingError> {
        let (sess, ch) = self.deploy(seed).map_err(|e| RoutingError::Config(e.to_string()))?;
        Ok((OperatedNetwork::from_session(&sess)?, ch))
    }
}
