use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "relaynet", version, about = "Relay placement, link learning and routing experiments")]
pub struct Cli {
    /// Artifact directory. RELAYNET_OUT takes precedence when set.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate R_max from a hello-packet trace or a preset's calibration campaign.
    Linkmodel(LinkmodelArgs),
    /// Initial relay design on the model graph.
    Design(DesignArgs),
    /// Design, learn, evaluate and augment against a simulated field until feasible.
    Iterate(IterateArgs),
    /// Redesign counts of a drifting field for every source set.
    Robustness(RobustnessArgs),
    /// Windowed delivery of static routes against RPL on paired channels.
    RplCompare(RplCompareArgs),
    /// CSMA/CA simulation of a deployed design.
    Macsim(MacsimArgs),
    /// Plot data files from experiment artifacts.
    Plots(PlotsArgs),
    /// Run the HTTP/SSE session service.
    Serve(ServeArgs),
}

/// Overrides applied on top of a scenario's QoS and link model.
#[derive(Debug, Clone, Default, Args)]
pub struct QosOverrides {
    /// Node-disjoint routes per source.
    #[arg(long)]
    pub k: Option<u32>,
    /// End-to-end delay bound in milliseconds.
    #[arg(long = "dmax-ms")]
    pub dmax_ms: Option<f64>,
    /// Required delivery probability.
    #[arg(long)]
    pub pdel: Option<f64>,
    /// Per-attempt packet error rate bound on good links.
    #[arg(long)]
    pub qmax: Option<f64>,
    /// Outage target of a good link.
    #[arg(long)]
    pub pout: Option<f64>,
    /// Target fraction of bad links at R_max.
    #[arg(long)]
    pub pbad: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Deployment scenario JSON.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Channel preset name or preset JSON path; drives the simulated field
    /// and calibrates scenarios whose link model is "estimate".
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub qos: QosOverrides,
}

#[derive(Debug, Args)]
pub struct LinkmodelArgs {
    /// Trace CSV with columns tx_id,rx_id,seq,rssi_dbm,time_ms.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub trace: Option<PathBuf>,
    /// Campaign metadata JSON; defaults to the trace path with a .meta.json extension.
    #[arg(long, requires = "trace")]
    pub meta: Option<PathBuf>,
    /// Run the preset's calibration campaign instead of reading a trace.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub pout: Option<f64>,
    #[arg(long)]
    pub pbad: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub qmax: f64,
    #[arg(long = "rssi-min", default_value_t = -88.0, allow_negative_numbers = true)]
    pub rssi_min: f64,
    /// Length bin width in meters; defaults to the preset's or 1 m.
    #[arg(long = "bin-width")]
    pub bin_width: Option<f64>,
    /// Also write the generated calibration trace and its metadata.
    #[arg(long = "write-trace", requires = "preset")]
    pub write_trace: bool,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct IterateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Hello packets per directed link in each learning campaign.
    #[arg(long, default_value_t = 2000)]
    pub packets: u64,
    #[arg(long = "max-iterations")]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Measurement cycles per run.
    #[arg(long, default_value_t = 40)]
    pub cycles: u32,
    /// Number of consecutive seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Predicted delivery below which a route triggers a redesign.
    #[arg(long, default_value_t = 0.73)]
    pub trigger: f64,
    #[arg(long = "cycle-gap-hours", default_value_t = 4.0)]
    pub cycle_gap_hours: f64,
    #[arg(long, default_value_t = 5000)]
    pub packets: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fixture {
    K1,
    K2,
}

#[derive(Debug, Args)]
pub struct RplCompareArgs {
    /// Built-in nine-node fixture; ignored when --scenario is given.
    #[arg(long, value_enum, default_value_t = Fixture::K2)]
    pub fixture: Fixture,
    /// Deploy this scenario on the preset's field instead of a fixture.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 5.0)]
    pub days: f64,
    /// Spread rank changes one neighbour round per data period.
    #[arg(long = "delayed-ranks")]
    pub delayed_ranks: bool,
    #[command(flatten)]
    pub qos: QosOverrides,
}

#[derive(Debug, Args)]
pub struct MacsimArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Poisson packet rate per source, packets per second.
    #[arg(long, default_value_t = 0.05)]
    pub rate: f64,
    #[arg(long = "duration-s", default_value_t = 20_000.0)]
    pub duration_s: f64,
    /// Carrier-sense range as a multiple of R_max.
    #[arg(long = "cs-factor", default_value_t = 1.5)]
    pub cs_factor: f64,
    /// Also search the largest rate meeting the delivery target.
    #[arg(long = "lambda-max")]
    pub lambda_max: bool,
    /// Upper end of the rate search, packets per second.
    #[arg(long = "rate-hi", default_value_t = 20.0)]
    pub rate_hi: f64,
    #[arg(long, default_value_t = 2000)]
    pub packets: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    PbadCurve,
    DeliveryWindows,
}

#[derive(Debug, Args)]
pub struct PlotsArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Input artifact: linkmodel.json for pbad_curve; a delivery CSV or
    /// macsim.json for delivery_windows.
    #[arg(long, required_unless_present = "preset")]
    pub artifact: Option<PathBuf>,
    /// For pbad_curve: calibrate this preset and plot one curve per outage target.
    #[arg(long, conflicts_with = "artifact")]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Outage targets of the curve family.
    #[arg(long = "pout-values", value_delimiter = ',', default_values_t = [0.004, 0.01, 0.02, 0.04, 0.08])]
    pub pout_values: Vec<f64>,
    #[arg(long = "rssi-min", default_value_t = -88.0, allow_negative_numbers = true)]
    pub rssi_min: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory for session snapshots; in-memory only when unset.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Require this bearer token on every request.
    #[arg(long, env = "RELAYNET_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}
