use std::collections::BTreeSet;

use relaynet_core::qosmap::PathPredictor;
use relaynet_core::routing::fixtures::{rpl_k1, rpl_k2, K1_SEVER_TIME_S};
use proptest::prelude::*;
use relaynet_core::routing::{ewma_update, simulate, DeliverySeries, Protocol, RoutingSimConfig, RplTree, EPSILON};
use relaynet_core::scenario::NodeId;
use relaynet_core::topology::{build_model_graph, validate_design, Design, Provenance, ValidateOptions};

fn cfg(seed: u64) -> RoutingSimConfig {
    RoutingSimConfig::new(0.05, -88.0, seed)
}

#[test]
fn k2_fixture_deploys_nine_nodes() {
    let (net, _) = rpl_k2().network(1).unwrap();
    assert_eq!(net.nodes.len(), 9);
    assert!(net.routes.values().all(|r| r.len() == 2));
}

#[test]
fn paired_k2_runs_deliver_and_stay_loop_free() {
    let fx = rpl_k2();
    for seed in 1..=3 {
        let (net, ch) = fx.network(seed).unwrap();
        let st = simulate(&net, &ch, &fx.events, Protocol::Static, &cfg(seed)).unwrap();
        let rpl = simulate(&net, &ch, &fx.events, Protocol::Rpl, &cfg(seed)).unwrap();
        assert!(rpl.loop_free);
        assert_eq!(rpl.series.rows.len(), 4 * 288);
        assert_eq!(st.series.rows.len(), 4 * 288);
        let (a, b) = (rpl.series.mean(Protocol::Rpl).unwrap(), st.series.mean(Protocol::Static).unwrap());
        println!("seed {seed}: rpl {a:.4} static {b:.4}");
        assert!(a > 0.9 && b > 0.9);
    }
}

#[test]
fn delayed_rank_propagation_stays_loop_free() {
    let fx = rpl_k2();
    let (net, ch) = fx.network(2).unwrap();
    let mut c = cfg(2);
    c.immediate_rank_propagation = false;
    c.duration_s = 86_400.0;
    let out = simulate(&net, &ch, &fx.events, Protocol::Rpl, &c).unwrap();
    assert!(out.loop_free);
    assert!(out.series.mean(Protocol::Rpl).unwrap() > 0.9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn settled_tree_ranks_decrease_toward_sink(
        estimates in proptest::collection::vec((0.0f64..=1.0, 0usize..8), 1..60),
    ) {
        let (net, _) = k2_network();
        let mut tree = RplTree::new(net.sink, &net.nodes, &net.good_links);
        let ids: Vec<NodeId> = tree.nodes.keys().copied().collect();
        for (per, pick) in estimates {
            let v = ids[pick % ids.len()];
            let parents: Vec<NodeId> = tree.nodes[&v].potential_parents.iter().copied().collect();
            if parents.is_empty() {
                continue;
            }
            let p = parents[(per * 1e6) as usize % parents.len()];
            tree.nodes.get_mut(&v).unwrap().record_window(p, per, 0.5).unwrap();
            tree.settle();
            prop_assert!(tree.ranks_decrease_toward_sink());
            for &s in &net.sources {
                if let Some(path) = tree.path_from(s) {
                    prop_assert!(path.windows(2).all(|w| tree.nodes[&w[0]].rank > tree.nodes[&w[1]].rank));
                }
            }
        }
    }

    #[test]
    fn ewma_stays_clamped_and_converges(prev in 0.0f64..=1.0, c in 0.0f64..=1.0, alpha in 0.0f64..1.0) {
        let mut q = prev;
        for n in 1..=40 {
            let next = ewma_update(q, c, alpha).unwrap();
            prop_assert!((EPSILON..=1.0).contains(&next));
            q = next;
            // Distance to the fixed point shrinks by alpha per window, up to the clamp.
            let bound = alpha.powi(n) * (prev - c).abs() + EPSILON;
            prop_assert!((q - c).abs() <= bound + 1e-12, "n={n} q={q} c={c}");
        }
    }
}

fn k2_network() -> (relaynet_core::routing::OperatedNetwork, relaynet_core::fieldsim::GroundTruthChannel) {
    static NET: std::sync::OnceLock<(relaynet_core::routing::OperatedNetwork, relaynet_core::fieldsim::GroundTruthChannel)> =
        std::sync::OnceLock::new();
    NET.get_or_init(|| rpl_k2().network(1).unwrap()).clone()
}

#[test]
fn rpl_strands_source_behind_severed_sole_parent() {
    let fx = rpl_k1();
    let (net, ch) = fx.network(3).unwrap();
    assert_eq!(net.nodes.len(), 9);
    assert_eq!(net.routes[&NodeId(1)], vec![vec![NodeId(1), NodeId(11), NodeId(0)]]);
    assert!(!net.good_links.contains(&(NodeId(11), NodeId(12))) && !net.good_links.contains(&(NodeId(12), NodeId(11))));
    let c = cfg(3);
    let out = simulate(&net, &ch, &fx.events, Protocol::Rpl, &c).unwrap();
    let series = out.series.source(NodeId(1), Protocol::Rpl);
    let sever_window = (K1_SEVER_TIME_S / c.data_period_s) as usize / c.window_packets;
    assert!(series[..sever_window].iter().all(|&p| p > 0.9), "{:?}", &series[..sever_window]);
    let after = &series[sever_window + 1..];
    assert!(!after.is_empty());
    assert!(after.iter().all(|&p| p == 0.0));
    // Other sources are unaffected.
    assert!(out.series.source(NodeId(2), Protocol::Rpl).iter().skip(1).all(|&p| p > 0.9));

    // Ground truth after the event still carries a QoS path 1-11-12-0.
    let mut truth_ch = ch.clone();
    for e in &fx.events {
        truth_ch.set_shadowing(e.a, e.b, e.shadow_db).unwrap();
    }
    let mut g = build_model_graph(&fx.scenario, &relaynet_core::designer::fixtures::model_r(100.0));
    let ids: Vec<NodeId> = fx.scenario.nodes.iter().map(|n| n.id).collect();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let p = truth_ch.outage_probability(a, b, -88.0).unwrap().max(truth_ch.outage_probability(b, a, -88.0).unwrap());
            let prov = if p <= 0.05 { Provenance::LearntGood } else { Provenance::LearntBad };
            g.set_edge(a, b, prov, Some(p));
        }
    }
    let path = vec![NodeId(1), NodeId(11), NodeId(12), NodeId(0)];
    let design = Design {
        relays_used: [NodeId(11), NodeId(12)].into_iter().collect(),
        routes: [(NodeId(1), vec![path.clone()])].into_iter().collect(),
        h_max: 5,
    };
    validate_design(&g, &design, 1, &ValidateOptions { all_sources: false }).unwrap();
    let pred = PathPredictor::new(0.05, 200.0, &Default::default()).unwrap();
    let outages: Vec<f64> = path.windows(2).map(|w| g.outage(w[0], w[1]).unwrap()).collect();
    assert!(pred.predict(&outages) >= 0.77);
}

#[test]
fn untouched_links_keep_initial_estimates() {
    let fx = rpl_k2();
    let (net, ch) = fx.network(2).unwrap();
    let mut c = cfg(2);
    c.duration_s = 6.0 * 3600.0;
    let out = simulate(&net, &ch, &fx.events, Protocol::Rpl, &c).unwrap();
    let tree = out.tree.unwrap();
    let mut untouched = 0;
    for (v, s) in &tree.nodes {
        for p in &s.potential_parents {
            if !out.used_links.contains(&(*v, *p)) {
                untouched += 1;
                assert_eq!(s.link_estimate[p], 1.0);
                assert!(!s.measured.contains(p));
            }
        }
    }
    assert!(untouched > 0);
}

#[test]
fn paired_runs_are_deterministic_and_csv_has_header() {
    let fx = rpl_k2();
    let (net, ch) = fx.network(4).unwrap();
    let mut c = cfg(4);
    c.duration_s = 3.0 * 3600.0;
    let run = || {
        let mut s = DeliverySeries::default();
        s.extend(simulate(&net, &ch, &[], Protocol::Static, &c).unwrap().series);
        s.extend(simulate(&net, &ch, &[], Protocol::Rpl, &c).unwrap().series);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        buf
    };
    let a = run();
    assert_eq!(a, run());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("window_index,source_id,p_del_hat,protocol\n"));
    let protocols: BTreeSet<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(protocols, ["rpl", "static"].into_iter().collect());
}

#[test]
fn empty_run_gives_header_only() {
    let mut buf = Vec::new();
    DeliverySeries::default().write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "window_index,source_id,p_del_hat,protocol\n");
}
