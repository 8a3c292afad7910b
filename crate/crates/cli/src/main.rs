//! `routewild`: cluster commuter trips, measure imitation regret, route
//! consistency and stress of catastrophe, or simulate congestion games
//! with known equilibria.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use routewild::clustering::ClusterMethod;
use routewild::model::{Mode, TrimMetric};
use routewild::pipeline::{
    run_analyze, run_freeflow_fetch, run_ingest, run_sensitivity, run_simulate, FlowChoice,
    PipelineError, ProviderChoice, SensitivityConfig, SimInstance, Stage,
};
use routewild::simulator::builtin::Builtin;

use config::ConfigFile;

#[derive(Parser, Debug)]
#[command(name = "routewild", version, about = "Empirical routing-game analysis of commuter trips")]
struct Cli {
    /// TOML file with defaults for any long flag (same names); flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate trips.jsonl and schools.csv; rejected lines go to <trips>.rejects.jsonl.
    Ingest(AnalyzeArgs),
    /// Full analysis: regret, consistency and (with a provider) stress of catastrophe.
    Analyze(AnalyzeArgs),
    /// Solve a congestion game and emit synthetic trips with ground truth.
    Simulate(SimulateArgs),
    /// Regret CCDFs over a sweep of cluster sizes and methods.
    Sensitivity(SensitivityArgs),
    /// Fill the free-flow cache for every (cell, school, mode) of a dataset.
    FreeflowFetch(AnalyzeArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Grid,
    Ball,
}

impl From<MethodArg> for ClusterMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Grid => ClusterMethod::Grid,
            MethodArg::Ball => ClusterMethod::Ball,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    None,
    Offline,
    External,
}

impl From<ProviderArg> for ProviderChoice {
    fn from(p: ProviderArg) -> Self {
        match p {
            ProviderArg::None => ProviderChoice::None,
            ProviderArg::Offline => ProviderChoice::Offline,
            ProviderArg::External => ProviderChoice::External,
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trips: Option<PathBuf>,
    #[arg(long)]
    pub schools: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub cluster_method: Option<MethodArg>,
    /// Grid cell edge or ball diameter, meters [default: 400].
    #[arg(long)]
    pub cluster_size_m: Option<f64>,
    /// Departure window, minutes [default: 20].
    #[arg(long)]
    pub window_min: Option<f64>,
    /// Smallest cluster kept [default: 2].
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    /// Width of the band around a route that counts as the same route [default: 80].
    #[arg(long)]
    pub band_width_m: Option<f64>,
    #[arg(long)]
    pub trim_low_pct: Option<f64>,
    #[arg(long)]
    pub trim_high_pct: Option<f64>,
    /// Also trim on travelled distance.
    #[arg(long)]
    pub trim_distance: bool,
    /// Count zero-regret baseline trips in the regret distribution.
    #[arg(long)]
    pub include_baselines: bool,
    /// Overrides the trips file header.
    #[arg(long, allow_hyphen_values = true)]
    pub utc_offset_s: Option<i64>,
    /// Simulator ground_truth.json; adds the PoA <= SoC check.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub freeflow_provider: Option<ProviderArg>,
    /// network.json for the offline provider.
    #[arg(long)]
    pub freeflow_network: Option<PathBuf>,
    #[arg(long)]
    pub freeflow_cache: Option<PathBuf>,
    /// Earlier cache files; the smallest duration per key wins.
    #[arg(long, num_args = 1..)]
    pub min_over_runs: Vec<PathBuf>,
    #[arg(long)]
    pub freeflow_endpoint: Option<String>,
    /// Replay recorded provider exchanges (JSONL) instead of calling the endpoint.
    #[arg(long)]
    pub freeflow_fixtures: Option<PathBuf>,
    /// Ask for best-case durations [default: true].
    #[arg(long)]
    pub freeflow_optimistic: Option<bool>,
    /// Concurrent provider requests [default: 4].
    #[arg(long)]
    pub freeflow_concurrency: Option<usize>,
    #[arg(long)]
    pub freeflow_max_attempts: Option<u32>,
    #[arg(long)]
    pub freeflow_timeout_s: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PigouArg {
    Linear,
    Quartic,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FlowArg {
    Equilibrium,
    Optimum,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Metro,
    Bus,
    Car,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    #[arg(long, value_enum, group = "instance")]
    pub pigou: Option<PigouArg>,
    #[arg(long, group = "instance")]
    pub braess: bool,
    /// Random 4x5 street grid, seeded by --seed.
    #[arg(long, group = "instance")]
    pub grid: bool,
    #[arg(long, requires = "demands", group = "instance")]
    pub network: Option<PathBuf>,
    #[arg(long, requires = "network")]
    pub demands: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub flow: Option<FlowArg>,
    #[arg(long)]
    pub demand_scale: Option<f64>,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub sigma_s: Option<f64>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub home_jitter_m: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub start_day: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub analyze: AnalyzeArgs,
    /// Cluster sizes in meters [default: 200,400,600,800,1000].
    #[arg(long, value_delimiter = ',')]
    pub r_list: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Vec<MethodArg>,
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p).map_err(|e| PipelineError::invalid(Stage::Config, e))?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Ingest(a) => {
            let cfg = file.analyze(&a)?;
            let r = run_ingest(&cfg)?;
            println!("accepted {} of {} lines, {} rejected", r.accepted, r.lines, r.rejected);
        }
        Command::Analyze(a) => {
            let cfg = file.analyze(&a)?;
            let out = run_analyze(&cfg)?;
            match &out.regret_summary {
                Some(s) => println!(
                    "clusters {}  regret mean {:.1} s  median {:.1} s  ({} trips)",
                    out.clusters, s.mean_s, s.median_s, s.population_size
                ),
                None => println!("no clusters of at least {} trips", cfg.min_cluster_size),
            }
            if let Some(r) = out.route_consistency.rate {
                println!("route consistency {:.3}", r);
            }
            if let Some(soc) = &out.soc {
                println!("stress of catastrophe {:.4}", soc.soc_overall);
            }
            println!("reports in {}", cfg.out_dir.display());
        }
        Command::Simulate(a) => {
            let cfg = file.simulate(&a)?;
            let out = run_simulate(&cfg)?;
            if let Some(p) = &out.poa {
                println!("price of anarchy {:.6}", p.poa);
            }
            println!(
                "{} trips, ground-truth SoC {:.4}, written to {}",
                out.traces.dataset.trips.len(),
                out.traces.truth.soc,
                cfg.out_dir.display()
            );
        }
        Command::Sensitivity(a) => {
            let cfg: SensitivityConfig = file.sensitivity(&a)?;
            for p in run_sensitivity(&cfg)? {
                match &p.summary {
                    Some(s) => println!("{} {:>6} m  mean {:.1} s  median {:.1} s", p.method, p.r_m, s.mean_s, s.median_s),
                    None => println!("{} {:>6} m  no clusters", p.method, p.r_m),
                }
            }
        }
        Command::FreeflowFetch(a) => {
            let cfg = file.analyze(&a)?;
            let run = run_freeflow_fetch(&cfg)?;
            println!(
                "{} keys, {} cache hits, {} provider calls, {} trips dropped",
                run.distinct_keys,
                run.cache_hits,
                run.provider_calls,
                run.dropped.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

pub(crate) fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::Metro => Mode::Metro,
        ModeArg::Bus => Mode::Bus,
        ModeArg::Car => Mode::Car,
    }
}

pub(crate) fn instance_of(pigou: Option<PigouArg>, braess: bool, grid: bool) -> Option<Builtin> {
    match (pigou, braess, grid) {
        (Some(PigouArg::Linear), _, _) => Some(Builtin::PigouLinear),
        (Some(PigouArg::Quartic), _, _) => Some(Builtin::PigouQuartic),
        (None, true, _) => Some(Builtin::Braess),
        (None, false, true) => Some(Builtin::Grid),
        _ => None,
    }
}

pub(crate) fn flow_of(f: FlowArg) -> FlowChoice {
    match f {
        FlowArg::Equilibrium => FlowChoice::Equilibrium,
        FlowArg::Optimum => FlowChoice::Optimum,
    }
}

pub(crate) fn trim_metric(distance: bool) -> TrimMetric {
    if distance {
        TrimMetric::DurationAndDistance
    } else {
        TrimMetric::Duration
    }
}

pub(crate) fn sim_instance(b: Option<Builtin>, network: Option<PathBuf>, demands: Option<PathBuf>) -> Option<SimInstance> {
    match (b, network, demands) {
        (Some(b), _, _) => Some(SimInstance::Builtin(b)),
        (None, Some(network), Some(demands)) => Some(SimInstance::Files { network, demands }),
        _ => None,
    }
}
