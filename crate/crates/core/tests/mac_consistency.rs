use std::collections::{BTreeMap, BTreeSet};

use relaynet_core::fieldsim::{lambda_max, run_mac_sim, ChannelParams, GroundTruthChannel, MacSimConfig};
use relaynet_core::qosmap::{predict_path_pdel, MacParams, QosSpec};
use relaynet_core::scenario::NodeId;
use relaynet_core::topology::Design;

const SPACING_M: f64 = 5.0;

/// Quiet channel: mean RSSI far above -88 dBm on every hop.
fn clean_channel(n_nodes: u32) -> GroundTruthChannel {
    let params = ChannelParams {
        tx_power_dbm: 0.0,
        pl0_db: 40.0,
        ref_dist_m: 1.0,
        path_loss_exp: 2.0,
        shadow_sigma_db: 0.0,
        fast_sigma_db: 1.0,
        drift_rho: 0.9,
        drift_sigma_db: 0.0,
        sensitivity_dbm: -100.0,
        seed: 3,
    };
    let pos: BTreeMap<NodeId, (f64, f64)> = (0..n_nodes).map(|i| (NodeId(i), (i as f64 * SPACING_M, 0.0))).collect();
    GroundTruthChannel::new(params, pos).unwrap()
}

/// Source `h` relays through `h-1, ..., 1` to sink 0.
fn chain(h: u32) -> Design {
    let path: Vec<NodeId> = (0..=h).rev().map(NodeId).collect();
    Design {
        relays_used: (1..h).map(NodeId).collect::<BTreeSet<_>>(),
        routes: [(NodeId(h), vec![path])].into_iter().collect(),
        h_max: h,
    }
}

#[test]
fn lone_packets_match_closed_form() {
    let mac = MacParams::default();
    for (q, per_hop_ms) in [(0.2, 7.0), (0.05, 40.0)] {
        for h in 1..=6u32 {
            let d_max = per_hop_ms * h as f64;
            let ch = clean_channel(h + 1);
            let outages: Vec<f64> = (0..h)
                .map(|i| ch.outage_probability(NodeId(i), NodeId(i + 1), -88.0).unwrap())
                .collect();
            assert!(outages.iter().all(|&p| p < 1e-9));
            let predicted = predict_path_pdel(&outages, q, d_max, &mac).unwrap();
            let cfg = MacSimConfig::new(q, -88.0, SPACING_M, 1.5, 11 + h as u64);
            let qos = QosSpec::new(d_max, 0.5, 1);
            let rate = 0.05;
            let log = run_mac_sim(&ch, &chain(h), rate, 4000.0 / rate, &qos, &cfg).unwrap();
            let got = log.source(NodeId(h)).unwrap().p_del_hat();
            assert!((got - predicted).abs() <= 0.02, "q={q} h={h}: sim {got} vs model {predicted}");
        }
    }
}

#[test]
fn overload_misses_target() {
    let ch = clean_channel(5);
    let cfg = MacSimConfig::new(0.05, -88.0, SPACING_M, 1.5, 5);
    let qos = QosSpec::new(200.0, 0.77, 1);
    let log = run_mac_sim(&ch, &chain(4), 400.0, 20.0, &qos, &cfg).unwrap();
    assert!(log.source(NodeId(4)).unwrap().p_del_hat() < qos.p_del);
    assert!(!log.sources[0].windows.is_empty());
    assert!(log.sources[0].windows.iter().all(|w| (0.0..=1.0).contains(&w.p_del_hat) && w.packets_sent == 100));
}

#[test]
fn rejects_non_positive_rate() {
    let ch = clean_channel(3);
    let cfg = MacSimConfig::new(0.05, -88.0, SPACING_M, 1.5, 5);
    let qos = QosSpec::new(200.0, 0.77, 1);
    assert!(run_mac_sim(&ch, &chain(2), 0.0, 10.0, &qos, &cfg).is_err());
}

#[test]
fn same_seed_same_log() {
    let ch = clean_channel(4);
    let cfg = MacSimConfig::new(0.1, -88.0, SPACING_M, 1.5, 9);
    let qos = QosSpec::new(50.0, 0.77, 1);
    let a = run_mac_sim(&ch, &chain(3), 30.0, 30.0, &qos, &cfg).unwrap();
    let b = run_mac_sim(&ch, &chain(3), 30.0, 30.0, &qos, &cfg).unwrap();
    assert_eq!(a, b);
    let mut csv_a = Vec::new();
    a.write_csv(&mut csv_a).unwrap();
    assert!(String::from_utf8(csv_a).unwrap().starts_with("source_id,window_index"));
}

#[test]
fn lambda_max_falls_with_hop_count() {
    let qos = QosSpec::new(200.0, 0.77, 1);
    let lams: Vec<f64> = (1..=6u32)
        .map(|h| {
            let ch = clean_channel(h + 1);
            let cfg = MacSimConfig::new(0.05, -88.0, SPACING_M, 1.5, 21);
            lambda_max(&ch, &chain(h), &qos, &cfg, 400.0, 1500, 12).unwrap()
        })
        .collect();
    for w in lams.windows(2) {
        assert!(w[1] <= w[0], "{lams:?}");
    }
    assert!(lams[5] < lams[0]);
}
