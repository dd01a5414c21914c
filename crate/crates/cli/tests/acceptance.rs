//! One PASS/FAIL line per acceptance criterion.
//!
//! A criterion is a list of checks. Checks marked as known deviations are
//! reported but do not fail the target; every other check must hold. Runs
//! without the libtest harness so the report is never captured.

mod common;
#[path = "../../core/tests/support/instances.rs"]
mod instances;
#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use relaynet_core::designer::fixtures::{bad_fraction_channel, indoor24, indoor24_source_sets, model_r};
use relaynet_core::designer::{robustness_experiment, CampaignMode, Phase, RobustnessConfig, SessionState, SimulatedField};
use relaynet_core::fieldsim::{lambda_max, run_mac_sim, ChannelParams, ChannelPreset, GroundTruthChannel, MacSimConfig};
use relaynet_core::linkmodel::LinkModel;
use relaynet_core::qosmap::{hop_bound, predict_path_pdel, MacParams, PathPredictor, QosSpec};
use relaynet_core::routing::fixtures::{rpl_k1, rpl_k2, K1_SEVER_TIME_S};
use relaynet_core::routing::{ewma_update, simulate, Protocol, RoutingSimConfig};
use relaynet_core::scenario::NodeId;
use relaynet_core::topology::{build_model_graph, extract_design, validate_design, Design, Provenance, ValidateOptions};

struct Check {
    what: String,
    ok: bool,
    known_deviation: bool,
}

fn check(what: impl Into<String>, ok: bool) -> Check {
    Check { what: what.into(), ok, known_deviation: false }
}

fn deviation(what: impl Into<String>, ok: bool) -> Check {
    Check { what: what.into(), ok, known_deviation: true }
}

fn within(elapsed: Duration, limit_s: u64) -> Check {
    check(format!("runtime {:.1} s < {limit_s} s", elapsed.as_secs_f64()), elapsed < Duration::from_secs(limit_s))
}

fn hop_bound_reproduction() -> Vec<Check> {
    let start = Instant::now();
    let mac = MacParams::default();
    let a = hop_bound(0.05, 200.0, 0.05, 0.77, 0.9999, &mac).unwrap();
    let b = hop_bound(0.05, 200.0, 0.05, 0.73, 0.9999, &mac).unwrap();
    let elapsed = start.elapsed();
    vec![
        check(format!("h_max_2 = {:?} (want 5)", a.h_max_2), a.h_max_2 == Some(5)),
        check(format!("h_max = {} at p_del 0.77 (want 5)", a.h_max), a.h_max == 5),
        check(format!("h_max = {} at p_del 0.73 (want 6)", b.h_max), b.h_max == 6),
        deviation(format!("h_max_1 = {} (want 6 +/- 1)", a.h_max_1), a.h_max_1.abs_diff(6) <= 1),
        within(elapsed, 1),
    ]
}

fn ewma_arithmetic() -> Vec<Check> {
    let start = Instant::now();
    let mut q = 1.0;
    for _ in 0..7 {
        q = ewma_update(q, 0.0, 0.5).unwrap();
    }
    let elapsed = start.elapsed();
    // Windows needed to fall below 0.01 from 1 at alpha 0.5.
    let needed = (0.01f64.ln() / 0.5f64.ln()).ceil() as u32;
    vec![
        check(format!("estimate after 7 windows = {q}"), q == 0.0078125 && q < 0.01),
        check(format!("windows to settle = {needed}"), needed == 7),
        check(format!("runtime {} us < 1 ms", elapsed.as_micros()), elapsed < Duration::from_millis(1)),
    ]
}

fn steiner_oracle() -> Vec<Check> {
    let start = Instant::now();
    let (mut feasible, mut exact, mut within2, mut valid, mut agree, mut small) = (0, 0, 0, 0, 0, 0);
    let n = 200;
    for seed in 0..n {
        let inst = instances::geometric(seed);
        let model = LinkModel::new(inst.r_max, -88.0, 0.05, 0.05, 0.2).unwrap();
        let g = build_model_graph(&inst.scenario, &model);
        let relays: BTreeSet<NodeId> = g.potential_relays().into_iter().collect();
        small += (relays.len() <= 12 && (1..=2).contains(&inst.k)) as usize;
        let best = oracle::Instance::new(&g, &oracle::traversable_edges(&g)).min_relays(
            inst.k,
            inst.h_max as usize,
            &relays,
            &BTreeSet::new(),
        );
        match (extract_design(&g, inst.h_max, inst.k), best) {
            (Ok(d), Some(opt)) => {
                agree += 1;
                feasible += 1;
                valid += validate_design(&g, &d, inst.k, &ValidateOptions::default()).is_ok() as usize;
                exact += (d.relay_count() == opt) as usize;
                within2 += (d.relay_count() <= opt + 2) as usize;
            }
            (Err(_), None) => agree += 1,
            _ => {}
        }
    }
    vec![
        check(format!("{small}/{n} instances have <= 12 relays and k in {{1, 2}}"), small == n as usize),
        check(format!("feasibility agrees with exhaustive search on {agree}/{n}"), agree == n as usize),
        check(format!("optimal on {exact}/{feasible} feasible instances (>= 80%)"), exact as f64 >= 0.8 * feasible as f64),
        check(format!("within optimum + 2 on {within2}/{feasible}"), within2 == feasible),
        check(format!("validator accepts {valid}/{feasible}"), valid == feasible),
        within(start.elapsed(), 120),
    ]
}

fn calibration_anchors() -> Vec<Check> {
    let mut out = Vec::new();
    for (name, po, want, tol) in [("indoor", 0.04, 8.0, 1.0), ("yard", 0.004, 30.0, 3.0)] {
        let p = ChannelPreset::builtin(name).unwrap();
        let c = &p.calibration;
        out.push(check(
            format!("{name}: {} nodes, {} hello packets, P_out {}, P_bad {}", c.nodes, c.hello_packets, c.p_out_target, c.p_bad_target),
            c.nodes == 50 && c.hello_packets == 1000 && c.p_out_target == po && c.p_bad_target == 0.2,
        ));
        let start = Instant::now();
        let r = p.calibrate(1, -88.0, 0.05).unwrap().model.r_max_m;
        let elapsed = start.elapsed();
        out.push(check(format!("{name}: R_max = {r} m (want {want} +/- {tol})"), (r - want).abs() <= tol));
        out.push(within(elapsed, 60));
    }
    out
}

const SPACING_M: f64 = 5.0;

/// Chain of nodes 5 m apart with mean RSSI far above -88 dBm.
fn clean_chain(n_nodes: u32) -> GroundTruthChannel {
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

fn chain(h: u32) -> Design {
    let path: Vec<NodeId> = (0..=h).rev().map(NodeId).collect();
    Design {
        relays_used: (1..h).map(NodeId).collect(),
        routes: [(NodeId(h), vec![path])].into_iter().collect(),
        h_max: h,
    }
}

fn mac_consistency() -> Vec<Check> {
    let start = Instant::now();
    let mac = MacParams::default();
    let mut worst: f64 = 0.0;
    let mut all_clean = true;
    for (q, per_hop_ms) in [(0.2, 7.0), (0.05, 40.0)] {
        for h in 1..=6u32 {
            let d_max = per_hop_ms * h as f64;
            let ch = clean_chain(h + 1);
            let outages: Vec<f64> =
                (0..h).map(|i| ch.outage_probability(NodeId(i), NodeId(i + 1), -88.0).unwrap()).collect();
            all_clean &= outages.iter().all(|&p| p < 1e-9);
            let predicted = predict_path_pdel(&outages, q, d_max, &mac).unwrap();
            let cfg = MacSimConfig::new(q, -88.0, SPACING_M, 1.5, 11 + h as u64);
            let rate = 0.05;
            let log = run_mac_sim(&ch, &chain(h), rate, 4000.0 / rate, &QosSpec::new(d_max, 0.5, 1), &cfg).unwrap();
            worst = worst.max((log.source(NodeId(h)).unwrap().p_del_hat() - predicted).abs());
        }
    }
    let qos = QosSpec::new(200.0, 0.77, 1);
    let lams: Vec<f64> = (1..=6u32)
        .map(|h| {
            let cfg = MacSimConfig::new(0.05, -88.0, SPACING_M, 1.5, 21);
            lambda_max(&clean_chain(h + 1), &chain(h), &qos, &cfg, 400.0, 1500, 12).unwrap()
        })
        .collect();
    let monotone = lams.windows(2).all(|w| w[1] <= w[0]) && lams[5] < lams[0];
    vec![
        check("fixtures are outage-free", all_clean),
        check(format!("max |sim - model| over 1..6 hops = {worst:.4} (<= 0.02)"), worst <= 0.02),
        check(format!("lambda_max non-increasing in hops: {:?}", lams.iter().map(|l| format!("{l:.2}")).collect::<Vec<_>>()), monotone),
        within(start.elapsed(), 120),
    ]
}

fn iterative_convergence() -> Vec<Check> {
    let start = Instant::now();
    let sets = indoor24_source_sets();
    let runs: Vec<(bool, bool)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..100u64)
            .map(|seed| {
                let set = sets[(seed % sets.len() as u64) as usize].clone();
                s.spawn(move || {
                    let sc = indoor24(&set);
                    let ch = bad_fraction_channel(&sc, 8.0, 0.2, seed);
                    let mut field = SimulatedField::new(ch, 2000, -88.0, CampaignMode::Counts);
                    let mut sess = SessionState::new(sc, model_r(8.0)).unwrap();
                    let Ok((_, n)) = sess.iterate_until_feasible(&mut field, None) else { return (false, true) };
                    let d = sess.current_design.as_ref().unwrap();
                    let view = sess.graph.learnt_view(&sess.deployed);
                    let valid = validate_design(&view, d, 1, &ValidateOptions::default()).is_ok();
                    let relays: BTreeSet<NodeId> = sess.scenario.potential_relays().into_iter().collect();
                    let deployed: BTreeSet<NodeId> = sess.deployed.intersection(&relays).copied().collect();
                    let pruned = deployed == d.relays_used && sess.phase == Phase::Operating;
                    (n <= 3 && valid, pruned)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let converged = runs.iter().filter(|r| r.0).count();
    let pruned = runs.iter().filter(|r| r.1).count();
    vec![
        check(format!("{converged}/100 validated feasible within 3 iterations (>= 90)"), converged >= 90),
        check(format!("finalize leaves only used relays on {pruned}/100"), pruned == 100),
        within(start.elapsed(), 300),
    ]
}

fn robustness_direction() -> Vec<Check> {
    let start = Instant::now();
    let preset = ChannelPreset::builtin("indoor").unwrap();
    let sc = indoor24(&[]);
    let sets = indoor24_source_sets();
    let totals: Vec<[(u32, usize); 2]> = std::thread::scope(|s| {
        let handles: Vec<_> = (1..=20u64)
            .map(|seed| {
                let (sc, sets, ch) = (&sc, &sets, &preset.channel);
                s.spawn(move || {
                    [1, 2].map(|k| {
                        let cfg = RobustnessConfig::new(k, ch.clone(), model_r(8.0));
                        let r = robustness_experiment(sc, sets, &cfg, seed).unwrap();
                        (r.total_redesigns(), r.zero_augmentation_sets())
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let sum = |k: usize| totals.iter().fold((0, 0), |acc, t| (acc.0 + t[k].0, acc.1 + t[k].1));
    let ((r1, z1), (r2, z2)) = (sum(0), sum(1));
    vec![
        check(
            format!("{} locations besides the sink, {} source sets, 20 seeds", sc.nodes.len() - 1, sets.len()),
            sc.nodes.len() - 1 == 24 && sets.len() == 10,
        ),
        check(format!("redesigns k=2 {r2} < k=1 {r1}"), r2 < r1),
        check(format!("zero-augmentation sets k=2 {z2}/200 > k=1 {z1}/200"), z2 > z1),
        within(start.elapsed(), 600),
    ]
}

fn rpl_behaviours() -> Vec<Check> {
    let start = Instant::now();
    let fx = rpl_k2();
    let seeds = 1..=5u64;
    let (mut rpl, mut st) = (0.0, 0.0);
    let mut loop_free = true;
    for seed in seeds.clone() {
        let (net, ch) = fx.network(seed).unwrap();
        let cfg = RoutingSimConfig::new(0.05, -88.0, seed);
        let r = simulate(&net, &ch, &fx.events, Protocol::Rpl, &cfg).unwrap();
        let s = simulate(&net, &ch, &fx.events, Protocol::Static, &cfg).unwrap();
        loop_free &= r.loop_free;
        rpl += r.series.mean(Protocol::Rpl).unwrap();
        st += s.series.mean(Protocol::Static).unwrap();
    }
    let n = seeds.count() as f64;
    let (rpl, st) = (rpl / n, st / n);

    let fx = rpl_k1();
    let seed = 3;
    let (net, ch) = fx.network(seed).unwrap();
    let cfg = RoutingSimConfig::new(0.05, -88.0, seed);
    let out = simulate(&net, &ch, &fx.events, Protocol::Rpl, &cfg).unwrap();
    let series = out.series.source(NodeId(1), Protocol::Rpl);
    let sever = (K1_SEVER_TIME_S / cfg.data_period_s) as usize / cfg.window_packets;
    let healthy_before = series[..sever].iter().all(|&p| p > 0.9);
    let after = &series[sever + 1..];
    let stranded = !after.is_empty() && after.iter().all(|&p| p == 0.0);

    // Ground truth after the event, judged by the validator on a bypass.
    let mut truth = ch.clone();
    for e in &fx.events {
        truth.set_shadowing(e.a, e.b, e.shadow_db).unwrap();
    }
    let mut g = build_model_graph(&fx.scenario, &model_r(100.0));
    let ids: Vec<NodeId> = fx.scenario.nodes.iter().map(|v| v.id).collect();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let p = truth.outage_probability(a, b, -88.0).unwrap().max(truth.outage_probability(b, a, -88.0).unwrap());
            g.set_edge(a, b, if p <= 0.05 { Provenance::LearntGood } else { Provenance::LearntBad }, Some(p));
        }
    }
    let path = vec![NodeId(1), NodeId(11), NodeId(12), NodeId(0)];
    let bypass = Design {
        relays_used: [NodeId(11), NodeId(12)].into_iter().collect(),
        routes: [(NodeId(1), vec![path.clone()])].into_iter().collect(),
        h_max: 5,
    };
    let valid = validate_design(&g, &bypass, 1, &ValidateOptions { all_sources: false }).is_ok();
    let outages: Vec<f64> = path.windows(2).map(|w| g.outage(w[0], w[1]).unwrap()).collect();
    let pdel = PathPredictor::new(0.05, 200.0, &MacParams::default()).unwrap().predict(&outages);

    vec![
        deviation(format!("(a) k=2 mean windowed delivery over 5 seeds: RPL {rpl:.4} >= static {st:.4}"), rpl >= st),
        check("(a) RPL trees stay loop-free", loop_free),
        check(format!("(b) source 1 above 0.9 for all {sever} windows before the sever"), healthy_before),
        check(format!("(b) source 1 at 0 for all {} windows after the sever", after.len()), stranded),
        check(format!("(b) validator accepts bypass 1-11-12-0, predicted p_del {pdel:.3} >= 0.77"), valid && pdel >= 0.77),
        within(start.elapsed(), 300),
    ]
}

fn determinism() -> Vec<Check> {
    let tmp = tempfile::tempdir().unwrap();
    common::experiments()
        .into_iter()
        .map(|(name, args)| {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let dirs = ["a", "b"].map(|r| tmp.path().join(name).join(r));
            let runs = dirs.clone().map(|d| common::relaynet(&d, &args));
            let ok = runs.iter().all(|r| r.code == 0)
                && runs[0].stdout == runs[1].stdout
                && common::files(&dirs[0]) == common::files(&dirs[1]);
            check(format!("{name}: {} artifacts identical", common::files(&dirs[0]).len()), ok)
        })
        .collect()
}

type Criterion = (&'static str, fn() -> Vec<Check>);

fn main() -> std::process::ExitCode {
    let criteria: [Criterion; 9] = [
        ("hop-bound reproduction", hop_bound_reproduction),
        ("EWMA arithmetic", ewma_arithmetic),
        ("Steiner oracle equivalence", steiner_oracle),
        ("calibration anchors", calibration_anchors),
        ("MAC cross-model consistency", mac_consistency),
        ("iterative convergence", iterative_convergence),
        ("robustness direction", robustness_direction),
        ("RPL fixture behaviours", rpl_behaviours),
        ("CLI determinism", determinism),
    ];
    // Timed criteria run one at a time so their runtimes are not inflated
    // by each other.
    let results: Vec<(&str, Vec<Check>)> = criteria.iter().map(|(name, f)| (*name, f())).collect();
    let mut unexpected = Vec::new();
    for (name, checks) in &results {
        let pass = checks.iter().all(|c| c.ok);
        println!("{} {name}", if pass { "PASS" } else { "FAIL" });
        for c in checks {
            let tag = match (c.ok, c.known_deviation) {
                (true, _) => "ok",
                (false, true) => "known deviation",
                (false, false) => "FAILED",
            };
            println!("    [{tag}] {}", c.what);
            if !c.ok && !c.known_deviation {
                unexpected.push(format!("{name}: {}", c.what));
            }
        }
    }
    if unexpected.is_empty() {
        return std::process::ExitCode::SUCCESS;
    }
    eprintln!("unexpected failures:");
    for u in &unexpected {
        eprintln!("    {u}");
    }
    std::process::ExitCode::FAILURE
}
