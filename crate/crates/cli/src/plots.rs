//! Plot data files. Every plot is a long-format CSV that any plotting
//! tool can facet by its first column.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use relaynet_core::fieldsim::DeliveryLog;
use relaynet_core::linkmodel::{build_pbad_curve, estimate_all_links, merge_bidirectional, select_rmax, LinkModelEstimate};
use serde::Deserialize;

use crate::args::{PlotKind, PlotsArgs};
use crate::commands::{calibration_campaign, preset, write_curve_csv};
use crate::output::Output;

const SERIES_HEADER: [&str; 4] = ["window_index", "source_id", "p_del_hat", "protocol"];
const LOG_HEADER: [&str; 5] = ["source_id", "window_index", "packets_sent", "packets_delivered_in_time", "p_del_hat"];

pub fn run(a: &PlotsArgs, out: &Output) -> anyhow::Result<()> {
    match a.kind {
        PlotKind::PbadCurve => pbad_curve(a, out),
        PlotKind::DeliveryWindows => {
            let Some(path) = &a.artifact else { bail!("delivery_windows needs --artifact") };
            delivery_windows(path, out)
        }
    }
}

fn pbad_curve(a: &PlotsArgs, out: &Output) -> anyhow::Result<()> {
    if let Some(path) = &a.artifact {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let est: LinkModelEstimate = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a link model artifact", path.display()))?;
        out.csv("pbad_curve.csv", |buf| write_curve_csv(buf, &[(est.model.p_out_target, &est.curve)]))?;
        println!("1 curve, R_max = {} m", est.model.r_max_m);
        return Ok(());
    }
    let name = a.preset.as_deref().expect("clap requires --artifact or --preset");
    if a.pout_values.is_empty() || a.pout_values.iter().any(|p| !(0.0..1.0).contains(p)) {
        bail!("--pout-values must lie in [0, 1)");
    }
    let p = preset(Some(name))?;
    let (trace, meta) = calibration_campaign(&p, a.seed)?;
    let links = merge_bidirectional(&estimate_all_links(&trace, &meta, a.rssi_min)?);
    let curves = a
        .pout_values
        .iter()
        .map(|&po| Ok((po, build_pbad_curve(&links, po, p.calibration.bin_width_m)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let refs: Vec<_> = curves.iter().map(|(po, c)| (*po, c)).collect();
    out.csv("pbad_curve.csv", |buf| write_curve_csv(buf, &refs))?;
    for (po, c) in &curves {
        match select_rmax(c, p.calibration.p_bad_target) {
            Ok(r) => println!("P_out = {po}: R_max = {r} m"),
            Err(e) => println!("P_out = {po}: {e}"),
        }
    }
    Ok(())
}

/// One point of a window series.
struct Point {
    series: String,
    source: u32,
    window: usize,
    p_del_hat: f64,
}

fn from_log(log: &DeliveryLog) -> Vec<Point> {
    log.sources
        .iter()
        .flat_map(|s| {
            s.windows.iter().map(move |w| Point {
                series: "mac".into(),
                source: s.source_id.0,
                window: w.window_index,
                p_del_hat: w.p_del_hat,
            })
        })
        .collect()
}

fn read_points(path: &Path) -> anyhow::Result<Vec<Point>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        #[derive(Deserialize)]
        struct Wrapped {
            log: DeliveryLog,
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let log = serde_json::from_value::<Wrapped>(v.clone())
            .map(|w| w.log)
            .or_else(|_| serde_json::from_value::<DeliveryLog>(v))
            .with_context(|| format!("{} is not a delivery log", path.display()))?;
        return Ok(from_log(&log));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let mut points = Vec::new();
    if cols == SERIES_HEADER {
        for row in rdr.records() {
            let row = row?;
            points.push(Point {
                series: row[3].to_string(),
                source: row[1].parse()?,
                window: row[0].parse()?,
                p_del_hat: row[2].parse()?,
            });
        }
    } else if cols == LOG_HEADER {
        for row in rdr.records() {
            let row = row?;
            points.push(Point {
                series: "mac".into(),
                source: row[0].parse()?,
                window: row[1].parse()?,
                p_del_hat: row[4].parse()?,
            });
        }
    } else {
        bail!("{} has columns {cols:?}, not a delivery window series or delivery log", path.display());
    }
    Ok(points)
}

fn delivery_windows(path: &Path, out: &Output) -> anyhow::Result<()> {
    let mut points = read_points(path)?;
    points.sort_by(|a, b| (&a.series, a.source, a.window).cmp(&(&b.series, b.source, b.window)));
    out.csv("delivery_windows_plot.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["series", "source_id", "window_index", "p_del_hat"])?;
        for p in &points {
            w.write_record([p.series.clone(), p.source.to_string(), p.window.to_string(), format!("{:.6}", p.p_del_hat)])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut per: BTreeMap<(&str, u32), usize> = BTreeMap::new();
    for p in &points {
        *per.entry((p.series.as_str(), p.source)).or_default() += 1;
    }
    println!("{} series, {} points", per.len(), points.len());
    Ok(())
}
