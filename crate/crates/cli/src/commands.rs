use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use relaynet_core::designer::{
    robustness_experiment, CampaignMode, DesignerError, IterationRecord, RobustnessConfig, RobustnessReport,
    SessionState, SimulatedField,
};
use relaynet_core::fieldsim::{
    calibration_layout, lambda_max, run_mac_sim, ChannelPreset, DeliveryLog, GroundTruthChannel, MacSimConfig,
};
use relaynet_core::linkmodel::{estimate_link_model, CampaignMeta, LinkModel, MeasurementTrace, PBadCurve};
use relaynet_core::qosmap::{HopBound, QosError, QosSpec};
use relaynet_core::routing::fixtures::{rpl_k1, rpl_k2};
use relaynet_core::routing::{simulate, LinkEvent, OperatedNetwork, Protocol, RoutingSimConfig};
use relaynet_core::scenario::{LinkModelSpec, NodeId};
use relaynet_core::topology::{Design, Infeasible};
use relaynet_core::DeploymentScenario;
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::output::Output;
use crate::{plots, Infeasibility};

const DEFAULT_PRESET: &str = "indoor";
const DEFAULT_Q_MAX: f64 = 0.05;
const DEFAULT_RSSI_MIN_DBM: f64 = -88.0;
const DEFAULT_P_OUT: f64 = 0.05;
const DEFAULT_P_BAD: f64 = 0.2;

pub fn dispatch(cmd: Command, out: &Output) -> anyhow::Result<()> {
    match cmd {
        Command::Linkmodel(a) => linkmodel(&a, out),
        Command::Design(a) => design(&a, out),
        Command::Iterate(a) => iterate(&a, out),
        Command::Robustness(a) => robustness(&a, out),
        Command::RplCompare(a) => rpl_compare(&a, out),
        Command::Macsim(a) => macsim(&a, out),
        Command::Plots(a) => plots::run(&a, out),
        Command::Serve(a) => serve(a),
    }
}

/// Turns the designer's declarations of infeasibility into [`Infeasibility`].
fn designer_err(e: DesignerError) -> anyhow::Error {
    match e {
        DesignerError::Infeasible(i) => Infeasibility(i.to_string()).into(),
        DesignerError::IterationLimit(_) | DesignerError::Qos(QosError::Infeasible { .. }) => {
            Infeasibility(e.to_string()).into()
        }
        other => anyhow!(other),
    }
}

pub fn preset(name: Option<&str>) -> anyhow::Result<ChannelPreset> {
    let name = name.unwrap_or(DEFAULT_PRESET);
    ChannelPreset::resolve(name).with_context(|| format!("channel preset {name:?}"))
}

/// Runs a preset's calibration campaign and returns the trace with its metadata.
pub fn calibration_campaign(p: &ChannelPreset, seed: u64) -> anyhow::Result<(MeasurementTrace, CampaignMeta)> {
    let c = &p.calibration;
    let pos = calibration_layout(c.width_m, c.height_m, c.nodes, seed);
    let mut ch = GroundTruthChannel::new(p.channel.clone().with_seed(seed), pos)?;
    let all: BTreeSet<NodeId> = ch.positions().keys().copied().collect();
    let trace = ch.hello_campaign(&all, c.hello_packets, 0.0)?;
    let meta = ch.campaign_meta(&all, c.hello_packets);
    Ok((trace, meta))
}

pub fn write_curve_csv(buf: &mut Vec<u8>, est: &[(f64, &PBadCurve)]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["p_out_target", "length_m", "n_links", "p_bad", "low_confidence"])?;
    for (p_out, curve) in est {
        for b in &curve.bins {
            w.write_record([
                format!("{p_out}"),
                format!("{:.3}", b.length_m),
                b.n_links.to_string(),
                format!("{:.6}", b.p_bad),
                b.low_confidence.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn linkmodel(a: &LinkmodelArgs, out: &Output) -> anyhow::Result<()> {
    let (trace, meta, p_out, p_bad, bin) = match (&a.trace, &a.preset) {
        (Some(path), _) => {
            let meta_path = a.meta.clone().unwrap_or_else(|| path.with_extension("meta.json"));
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let trace = MeasurementTrace::read_csv(file).with_context(|| format!("reading {}", path.display()))?;
            let meta: CampaignMeta = read_json(&meta_path)?;
            (trace, meta, a.pout.unwrap_or(DEFAULT_P_OUT), a.pbad.unwrap_or(DEFAULT_P_BAD), a.bin_width.unwrap_or(1.0))
        }
        (None, Some(name)) => {
            let p = preset(Some(name))?;
            let (trace, meta) = calibration_campaign(&p, a.seed)?;
            if a.write_trace {
                out.csv("trace.csv", |buf| Ok(trace.write_csv(buf)?))?;
                out.json("trace.meta.json", &meta)?;
            }
            let c = &p.calibration;
            (
                trace,
                meta,
                a.pout.unwrap_or(c.p_out_target),
                a.pbad.unwrap_or(c.p_bad_target),
                a.bin_width.unwrap_or(c.bin_width_m),
            )
        }
        (None, None) => bail!("either --trace or --preset is required"),
    };
    let est = estimate_link_model(&trace, &meta, a.rssi_min, a.qmax, p_out, p_bad, bin)?;
    out.json("linkmodel.json", &est)?;
    out.csv("pbad_curve.csv", |buf| write_curve_csv(buf, &[(p_out, &est.curve)]))?;
    println!("R_max = {} m (P_out = {p_out}, P_bad = {p_bad})", est.model.r_max_m);
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Scenario with QoS overrides applied and its link model resolved.
fn load_scenario(a: &ScenarioArgs) -> anyhow::Result<(DeploymentScenario, LinkModel)> {
    let mut s = DeploymentScenario::load(&a.scenario)?;
    resolve(&mut s, &a.qos, a.preset.as_deref(), a.seed)
}

fn resolve(
    s: &mut DeploymentScenario,
    o: &QosOverrides,
    preset_name: Option<&str>,
    seed: u64,
) -> anyhow::Result<(DeploymentScenario, LinkModel)> {
    if let Some(k) = o.k {
        s.qos.k = k;
    }
    if let Some(d) = o.dmax_ms {
        s.qos.d_max_ms = d;
    }
    if let Some(p) = o.pdel {
        s.qos.p_del = p;
    }
    s.validate()?;
    let model = match &s.link_model {
        LinkModelSpec::Given(m) => {
            let mut m = *m;
            m.q_max = o.qmax.unwrap_or(m.q_max);
            m.p_out_target = o.pout.unwrap_or(m.p_out_target);
            m.p_bad_target = o.pbad.unwrap_or(m.p_bad_target);
            m.validate()?;
            m
        }
        LinkModelSpec::Keyword(_) => {
            let name = preset_name.ok_or_else(|| anyhow!("link_model \"estimate\" needs --preset"))?;
            let mut p = preset(Some(name))?;
            p.calibration.p_out_target = o.pout.unwrap_or(p.calibration.p_out_target);
            p.calibration.p_bad_target = o.pbad.unwrap_or(p.calibration.p_bad_target);
            let est = p.calibrate(seed, DEFAULT_RSSI_MIN_DBM, o.qmax.unwrap_or(DEFAULT_Q_MAX))?;
            est.model
        }
    };
    Ok((s.clone(), model))
}

fn field_for(s: &DeploymentScenario, preset_name: Option<&str>, seed: u64, packets: u64, model: &LinkModel) -> anyhow::Result<SimulatedField> {
    let p = preset(preset_name)?;
    let ch = GroundTruthChannel::new(p.channel.with_seed(seed), s.positions())?;
    Ok(SimulatedField::new(ch, packets, model.rssi_min_dbm, CampaignMode::Counts))
}

#[derive(Serialize)]
struct DesignArtifact<'a> {
    link_model: &'a LinkModel,
    qos: &'a QosSpec,
    hop_bound: &'a HopBound,
    deployed: &'a BTreeSet<NodeId>,
    design: &'a Design,
    per_source_pdel_predicted: BTreeMap<NodeId, f64>,
    per_route_pdel_predicted: BTreeMap<NodeId, Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
}

#[derive(Serialize)]
struct InfeasibleArtifact<'a> {
    link_model: &'a LinkModel,
    qos: &'a QosSpec,
    message: String,
    infeasible: Option<&'a Infeasible>,
}

fn write_design(out: &Output, s: &SessionState, d: &Design, iterations: Option<usize>) -> anyhow::Result<()> {
    out.json(
        "design.json",
        &DesignArtifact {
            link_model: &s.link_model,
            qos: &s.qos,
            hop_bound: &s.hop_bound,
            deployed: &s.deployed,
            design: d,
            per_source_pdel_predicted: s.predicted_pdel(d),
            per_route_pdel_predicted: s.predicted_route_pdel(d),
            iterations,
        },
    )?;
    Ok(())
}

fn write_infeasible(out: &Output, s: &DeploymentScenario, m: &LinkModel, e: &DesignerError, i: Option<&Infeasible>) -> anyhow::Result<()> {
    out.json("infeasible.json", &InfeasibleArtifact { link_model: m, qos: &s.qos, message: e.to_string(), infeasible: i })?;
    Ok(())
}

fn ids(set: &BTreeSet<NodeId>) -> String {
    if set.is_empty() {
        return "none".into();
    }
    set.iter().map(|v| v.0.to_string()).collect::<Vec<_>>().join(",")
}

fn design(a: &DesignArgs, out: &Output) -> anyhow::Result<()> {
    let (s, model) = load_scenario(&a.scenario)?;
    let mut sess = match SessionState::new(s.clone(), model) {
        Ok(x) => x,
        Err(e) => {
            write_infeasible(out, &s, &model, &e, None)?;
            return Err(designer_err(e));
        }
    };
    match sess.initial_design() {
        Ok(d) => {
            write_design(out, &sess, &d, None)?;
            println!("h_max = {}, k = {}, relays = {} ({})", sess.h_max(), sess.k(), d.relay_count(), ids(&d.relays_used));
            Ok(())
        }
        Err(e) => {
            write_infeasible(out, &s, &model, &e, sess.infeasible.as_ref())?;
            Err(designer_err(e))
        }
    }
}

/// Iterative design against a simulated field. Returns the finished
/// session and the field as left by the last campaign.
fn deploy(
    s: &DeploymentScenario,
    model: LinkModel,
    field: &mut SimulatedField,
    max_iterations: Option<usize>,
    out: &Output,
) -> anyhow::Result<(SessionState, Design, usize)> {
    let mut sess = match SessionState::new(s.clone(), model) {
        Ok(x) => x,
        Err(e) => {
            write_infeasible(out, s, &model, &e, None)?;
            return Err(designer_err(e));
        }
    };
    let result = sess.iterate_until_feasible(field, max_iterations);
    out.json("iteration_log.json", &sess.iteration_log)?;
    out.json("session.json", &sess)?;
    match result {
        Ok((d, n)) => Ok((sess, d, n)),
        Err(e) => {
            write_infeasible(out, s, &model, &e, sess.infeasible.as_ref())?;
            Err(designer_err(e))
        }
    }
}

fn print_log(log: &[IterationRecord]) {
    for r in log {
        let action = serde_json::to_value(r.action).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        println!(
            "#{} {action}: +[{}] -[{}] feasible={}",
            r.index,
            ids(&r.relays_added),
            ids(&r.relays_removed),
            r.feasible
        );
    }
}

fn iterate(a: &IterateArgs, out: &Output) -> anyhow::Result<()> {
    let (s, model) = load_scenario(&a.scenario)?;
    let mut field = field_for(&s, a.scenario.preset.as_deref(), a.scenario.seed, a.packets, &model)?;
    let res = deploy(&s, model, &mut field, a.max_iterations, out);
    let (sess, d, n) = match res {
        Ok(v) => v,
        Err(e) => {
            if let Ok(log) = read_json::<Vec<IterationRecord>>(&out.dir().join("iteration_log.json")) {
                print_log(&log);
            }
            return Err(e);
        }
    };
    write_design(out, &sess, &d, Some(n))?;
    print_log(&sess.iteration_log);
    println!("feasible after {n} iteration(s); relays = {} ({})", d.relay_count(), ids(&d.relays_used));
    Ok(())
}

/// Source sets listed under `source_sets` in the scenario file, or the
/// scenario's own sources.
fn source_sets(path: &Path, s: &DeploymentScenario) -> anyhow::Result<Vec<Vec<NodeId>>> {
    #[derive(Deserialize)]
    struct Sets {
        #[serde(default)]
        source_sets: Option<Vec<Vec<NodeId>>>,
    }
    let sets: Sets = read_json(path)?;
    let sets = sets.source_sets.unwrap_or_else(|| vec![s.sources()]);
    for set in &sets {
        s.with_sources(set).with_context(|| format!("source set {set:?}"))?;
    }
    Ok(sets)
}

#[derive(Serialize)]
struct RobustnessArtifact {
    k: u32,
    n_cycles: u32,
    trigger_pdel: f64,
    seeds: Vec<u64>,
    source_sets: Vec<Vec<NodeId>>,
    total_redesigns: u32,
    zero_augmentation_sets: usize,
    runs: usize,
    reports: Vec<RobustnessReport>,
}

/// Runs `f` for every seed on a pool of scoped threads; results keep seed order.
fn per_seed<T: Send>(seeds: &[u64], f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len()).max(1);
    let chunk = seeds.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk.max(1))
            .map(|part| scope.spawn(|| part.iter().map(|&s| f(s)).collect::<Vec<T>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn robustness(a: &RobustnessArgs, out: &Output) -> anyhow::Result<()> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let (s, model) = load_scenario(&a.scenario)?;
    let sets = source_sets(&a.scenario.scenario, &s)?;
    let p = preset(a.scenario.preset.as_deref())?;
    let mut cfg = RobustnessConfig::new(s.qos.k, p.channel.clone(), model);
    cfg.n_cycles = a.cycles;
    cfg.trigger_pdel = a.trigger;
    cfg.cycle_gap_hours = a.cycle_gap_hours;
    cfg.campaign_packets = a.packets;
    let seeds: Vec<u64> = (a.scenario.seed..a.scenario.seed + a.seeds).collect();
    let reports = per_seed(&seeds, |seed| robustness_experiment(&s, &sets, &cfg, seed))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(designer_err)?;

    let total: u32 = reports.iter().map(RobustnessReport::total_redesigns).sum();
    let zero: usize = reports.iter().map(RobustnessReport::zero_augmentation_sets).sum();
    let runs = reports.len() * sets.len();
    let mut text = String::new();
    for r in &reports {
        text.push_str(&format!("seed {}\n", r.seed));
        text.push_str(&r.to_table());
        text.push('\n');
    }
    let summary = format!(
        "k = {}, {} seed(s) x {} source set(s): total redesigns = {total}, no augmentation = {zero}/{runs}\n",
        cfg.k,
        seeds.len(),
        sets.len()
    );
    text.push_str(&summary);
    out.text("robustness.txt", &text)?;
    out.csv("robustness.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["seed", "sources", "initial_relays", "augmentation_cycles", "final_relays", "redesign_count", "infeasible"])?;
        for r in &reports {
            for row in &r.rows {
                let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
                w.write_record([
                    r.seed.to_string(),
                    join(&mut row.sources.iter().map(|v| v.0.to_string())),
                    join(&mut row.initial_relays.iter().map(|v| v.0.to_string())),
                    join(&mut row.augmentation_cycles.iter().map(u32::to_string)),
                    join(&mut row.final_relays.iter().map(|v| v.0.to_string())),
                    row.redesign_count.to_string(),
                    row.infeasible.clone().unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    out.json(
        "robustness.json",
        &RobustnessArtifact {
            k: cfg.k,
            n_cycles: cfg.n_cycles,
            trigger_pdel: cfg.trigger_pdel,
            seeds,
            source_sets: sets,
            total_redesigns: total,
            zero_augmentation_sets: zero,
            runs,
            reports: reports.clone(),
        },
    )?;
    if reports.len() == 1 {
        print!("{}", reports[0].to_table());
    } else {
        print!("{summary}");
    }
    Ok(())
}

#[derive(Serialize)]
struct SourceComparison {
    source: NodeId,
    static_mean: Option<f64>,
    rpl_mean: Option<f64>,
    static_min: Option<f64>,
    rpl_min: Option<f64>,
}

#[derive(Serialize)]
struct RplArtifact {
    network: String,
    seed: u64,
    days: f64,
    immediate_rank_propagation: bool,
    static_mean: Option<f64>,
    rpl_mean: Option<f64>,
    rpl_loop_free: bool,
    events: Vec<LinkEvent>,
    sources: Vec<SourceComparison>,
}

fn stats(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    (Some(v.iter().sum::<f64>() / v.len() as f64), v.iter().copied().reduce(f64::min))
}

fn rpl_compare(a: &RplCompareArgs, out: &Output) -> anyhow::Result<()> {
    if a.days.is_nan() || a.days <= 0.0 {
        bail!("--days must be positive");
    }
    let (name, net, ch, events, model): (String, OperatedNetwork, GroundTruthChannel, Vec<LinkEvent>, LinkModel) =
        match &a.scenario {
            None => {
                let (name, fx) = match a.fixture {
                    Fixture::K1 => ("fixture k1", rpl_k1()),
                    Fixture::K2 => ("fixture k2", rpl_k2()),
                };
                let model = *fx.scenario.link_model.given().expect("fixtures carry a link model");
                let (net, ch) = fx.network(a.seed).map_err(|e| anyhow!(e))?;
                (name.into(), net, ch, fx.events.clone(), model)
            }
            Some(path) => {
                let mut s = DeploymentScenario::load(path)?;
                let (s, model) = resolve(&mut s, &a.qos, a.preset.as_deref(), a.seed)?;
                let mut field = field_for(&s, a.preset.as_deref(), a.seed, 2000, &model)?;
                let (sess, _, _) = deploy(&s, model, &mut field, None, out)?;
                let net = OperatedNetwork::from_session(&sess).map_err(|e| anyhow!(e))?;
                (path.display().to_string(), net, field.channel, Vec::new(), model)
            }
        };
    let mut cfg = RoutingSimConfig::new(model.q_max, model.rssi_min_dbm, a.seed);
    cfg.duration_s = a.days * 86_400.0;
    cfg.immediate_rank_propagation = !a.delayed_ranks;
    let st = simulate(&net, &ch, &events, Protocol::Static, &cfg).map_err(|e| anyhow!(e))?;
    let rpl = simulate(&net, &ch, &events, Protocol::Rpl, &cfg).map_err(|e| anyhow!(e))?;
    let mut series = st.series.clone();
    series.extend(rpl.series.clone());
    out.csv("delivery_windows.csv", |buf| Ok(series.write_csv(buf)?))?;
    let sources = net
        .sources
        .iter()
        .map(|&v| {
            let (sm, smin) = stats(&series.source(v, Protocol::Static));
            let (rm, rmin) = stats(&series.source(v, Protocol::Rpl));
            SourceComparison { source: v, static_mean: sm, rpl_mean: rm, static_min: smin, rpl_min: rmin }
        })
        .collect::<Vec<_>>();
    let art = RplArtifact {
        network: name,
        seed: a.seed,
        days: a.days,
        immediate_rank_propagation: cfg.immediate_rank_propagation,
        static_mean: series.mean(Protocol::Static),
        rpl_mean: series.mean(Protocol::Rpl),
        rpl_loop_free: rpl.loop_free,
        events,
        sources,
    };
    out.json("rpl_compare.json", &art)?;
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("{} seed {}: static {} rpl {} (loop free: {})", art.network, a.seed, f(art.static_mean), f(art.rpl_mean), art.rpl_loop_free);
    for s in &art.sources {
        println!("  source {}: static {} rpl {}", s.source, f(s.static_mean), f(s.rpl_mean));
    }
    Ok(())
}

#[derive(Serialize)]
struct MacArtifact<'a> {
    rate_per_source: f64,
    duration_s: f64,
    config: &'a MacSimConfig,
    design: &'a Design,
    per_source_pdel_predicted: BTreeMap<NodeId, f64>,
    per_source_pdel_simulated: BTreeMap<NodeId, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_max: Option<f64>,
    log: &'a DeliveryLog,
}

fn macsim(a: &MacsimArgs, out: &Output) -> anyhow::Result<()> {
    let (s, model) = load_scenario(&a.scenario)?;
    let mut field = field_for(&s, a.scenario.preset.as_deref(), a.scenario.seed, a.packets, &model)?;
    let (sess, d, _) = deploy(&s, model, &mut field, None, out)?;
    let cfg = MacSimConfig::new(model.q_max, model.rssi_min_dbm, model.r_max_m, a.cs_factor, a.scenario.seed);
    let log = run_mac_sim(&field.channel, &d, a.rate, a.duration_s, &sess.qos, &cfg)?;
    let lmax = if a.lambda_max {
        Some(lambda_max(&field.channel, &d, &sess.qos, &cfg, a.rate_hi, 2000, 14)?)
    } else {
        None
    };
    out.csv("delivery_log.csv", |buf| Ok(log.write_csv(buf)?))?;
    let simulated: BTreeMap<NodeId, f64> = log.sources.iter().map(|l| (l.source_id, l.p_del_hat())).collect();
    out.json(
        "macsim.json",
        &MacArtifact {
            rate_per_source: a.rate,
            duration_s: a.duration_s,
            config: &cfg,
            design: &d,
            per_source_pdel_predicted: sess.predicted_pdel(&d),
            per_source_pdel_simulated: simulated.clone(),
            lambda_max: lmax,
            log: &log,
        },
    )?;
    for (v, p) in &simulated {
        println!("source {v}: p_del_hat {p:.4}");
    }
    if let Some(l) = lmax {
        let capped = if l >= a.rate_hi { " (search ceiling)" } else { "" };
        println!("lambda_max = {l:.4} pkt/s per source{capped}");
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    let state = relaynet_service::AppState::new(relaynet_service::ServiceConfig {
        store_dir: a.store,
        token: a.token,
    })?;
    eprintln!("listening on http://{}", a.addr);
    rt.block_on(relaynet_service::serve(a.addr, state))?;
    Ok(())
}
