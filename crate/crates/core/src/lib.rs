//! Relay placement, link learning and routing for low-power wireless
//! sensor networks.

// Range checks are written as `!(x >= lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod designer;
pub mod fieldsim;
pub mod linkmodel;
pub mod qosmap;
pub mod routing;
pub mod scenario;
pub mod topology;

pub use linkmodel::{LinkModel, MeasurementTrace};
pub use qosmap::{HopBound, MacParams, QosSpec};
pub use scenario::{DeploymentScenario, Node, NodeId, Role};
pub use topology::{Design, NetworkGraph};
