//! `--config` TOML: the same keys as the long flags. Command-line flags take
//! precedence over the file, the file over built-in defaults. Relative
//! paths in the file are resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use routewild::clustering::ClusterMethod;
use routewild::pipeline::{
    AnalyzeConfig, PipelineError, SensitivityConfig, SimInstance, SimulateConfig, Stage,
};
use serde::Deserialize;

use crate::{
    flow_of, instance_of, mode_of, sim_instance, trim_metric, AnalyzeArgs, FlowArg, MethodArg,
    ModeArg, PigouArg, ProviderArg, SensitivityArgs, SimulateArgs,
};

pub const DEFAULT_SWEEP_M: [f64; 5] = [200.0, 400.0, 600.0, 800.0, 1000.0];

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip)]
    base: Option<PathBuf>,

    trips: Option<PathBuf>,
    schools: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    cluster_method: Option<String>,
    cluster_size_m: Option<f64>,
    window_min: Option<f64>,
    min_cluster_size: Option<usize>,
    band_width_m: Option<f64>,
    trim_low_pct: Option<f64>,
    trim_high_pct: Option<f64>,
    trim_distance: Option<bool>,
    include_baselines: Option<bool>,
    utc_offset_s: Option<i64>,
    ground_truth: Option<PathBuf>,
    seed: Option<u64>,
    freeflow_provider: Option<String>,
    freeflow_network: Option<PathBuf>,
    freeflow_cache: Option<PathBuf>,
    min_over_runs: Option<Vec<PathBuf>>,
    freeflow_endpoint: Option<String>,
    freeflow_fixtures: Option<PathBuf>,
    freeflow_optimistic: Option<bool>,
    freeflow_concurrency: Option<usize>,
    freeflow_max_attempts: Option<u32>,
    freeflow_timeout_s: Option<u64>,

    pigou: Option<String>,
    braess: Option<bool>,
    grid: Option<bool>,
    network: Option<PathBuf>,
    demands: Option<PathBuf>,
    flow: Option<String>,
    demand_scale: Option<f64>,
    agents: Option<usize>,
    sigma_s: Option<f64>,
    days: Option<usize>,
    home_jitter_m: Option<f64>,
    mode: Option<String>,
    start_day: Option<String>,
    tol: Option<f64>,
    max_iter: Option<usize>,

    r_list: Option<Vec<f64>>,
    methods: Option<Vec<String>>,
}

fn invalid(msg: impl ToString) -> PipelineError {
    PipelineError::invalid(Stage::Config, msg)
}

fn choice<T: ValueEnum>(key: &str, v: &Option<String>) -> Result<Option<T>, PipelineError> {
    v.as_deref()
        .map(|s| T::from_str(s, false).map_err(|e| invalid(format!("config key `{key}`: {e}"))))
        .transpose()
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, PipelineError> {
    v.ok_or_else(|| invalid(format!("missing --{flag}")))
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: ConfigFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    fn path(&self, p: &Option<PathBuf>) -> Option<PathBuf> {
        p.as_ref().map(|p| match &self.base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        })
    }

    pub fn analyze(&self, a: &AnalyzeArgs) -> Result<AnalyzeConfig, PipelineError> {
        let mut c = AnalyzeConfig::new(
            required(a.trips.clone().or(self.path(&self.trips)), "trips")?,
            required(a.schools.clone().or(self.path(&self.schools)), "schools")?,
            required(a.out_dir.clone().or(self.path(&self.out_dir)), "out-dir")?,
        );
        if let Some(m) = a.cluster_method.or(choice::<MethodArg>("cluster-method", &self.cluster_method)?) {
            c.cluster_method = m.into();
        }
        c.cluster_size_m = a.cluster_size_m.or(self.cluster_size_m).unwrap_or(c.cluster_size_m);
        c.window_min = a.window_min.or(self.window_min).unwrap_or(c.window_min);
        c.min_cluster_size = a.min_cluster_size.or(self.min_cluster_size).unwrap_or(c.min_cluster_size);
        c.band_width_m = a.band_width_m.or(self.band_width_m).unwrap_or(c.band_width_m);
        c.trim_low_pct = a.trim_low_pct.or(self.trim_low_pct).unwrap_or(c.trim_low_pct);
        c.trim_high_pct = a.trim_high_pct.or(self.trim_high_pct).unwrap_or(c.trim_high_pct);
        c.trim_metric = trim_metric(a.trim_distance || self.trim_distance.unwrap_or(false));
        c.include_baselines = a.include_baselines || self.include_baselines.unwrap_or(false);
        c.utc_offset_s = a.utc_offset_s.or(self.utc_offset_s);
        c.ground_truth = a.ground_truth.clone().or(self.path(&self.ground_truth));
        c.seed = a.seed.or(self.seed).unwrap_or(c.seed);

        let f = &mut c.freeflow;
        if let Some(p) = a.freeflow_provider.or(choice::<ProviderArg>("freeflow-provider", &self.freeflow_provider)?) {
            f.provider = p.into();
        }
        f.network = a.freeflow_network.clone().or(self.path(&self.freeflow_network));
        f.cache = a.freeflow_cache.clone().or(self.path(&self.freeflow_cache));
        f.min_over_runs = if a.min_over_runs.is_empty() {
            self.min_over_runs
                .iter()
                .flatten()
                .filter_map(|p| self.path(&Some(p.clone())))
                .collect()
        } else {
            a.min_over_runs.clone()
        };
        f.endpoint = a.freeflow_endpoint.clone().or(self.freeflow_endpoint.clone());
        f.fixtures = a.freeflow_fixtures.clone().or(self.path(&self.freeflow_fixtures));
        f.optimistic = a.freeflow_optimistic.or(self.freeflow_optimistic).unwrap_or(f.optimistic);
        f.concurrency = a.freeflow_concurrency.or(self.freeflow_concurrency).unwrap_or(f.concurrency);
        f.max_attempts = a.freeflow_max_attempts.or(self.freeflow_max_attempts).unwrap_or(f.max_attempts);
        f.timeout_s = a.freeflow_timeout_s.or(self.freeflow_timeout_s).unwrap_or(f.timeout_s);
        Ok(c)
    }

    pub fn simulate(&self, a: &SimulateArgs) -> Result<SimulateConfig, PipelineError> {
        let from_flags = sim_instance(
            instance_of(a.pigou, a.braess, a.grid),
            a.network.clone(),
            a.demands.clone(),
        );
        let from_file = || -> Result<Option<SimInstance>, PipelineError> {
            Ok(sim_instance(
                instance_of(
                    choice::<PigouArg>("pigou", &self.pigou)?,
                    self.braess.unwrap_or(false),
                    self.grid.unwrap_or(false),
                ),
                self.path(&self.network),
                self.path(&self.demands),
            ))
        };
        let instance = match from_flags {
            Some(i) => i,
            None => from_file()?.ok_or_else(|| {
                invalid("choose an instance: --pigou, --braess, --grid or --network with --demands")
            })?,
        };
        let out = required(a.out_dir.clone().or(self.path(&self.out_dir)), "out-dir")?;
        let mut c = SimulateConfig::new(instance, out);
        if let Some(f) = a.flow.or(choice::<FlowArg>("flow", &self.flow)?) {
            c.flow = flow_of(f);
        }
        c.demand_scale = a.demand_scale.or(self.demand_scale).unwrap_or(c.demand_scale);
        c.tol = a.tol.or(self.tol).unwrap_or(c.tol);
        c.max_iter = a.max_iter.or(self.max_iter).unwrap_or(c.max_iter);
        let t = &mut c.traces;
        t.n_agents = a.agents.or(self.agents).unwrap_or(t.n_agents);
        t.sigma_s = a.sigma_s.or(self.sigma_s).unwrap_or(t.sigma_s);
        t.days = a.days.or(self.days).unwrap_or(t.days);
        t.seed = a.seed.or(self.seed).unwrap_or(t.seed);
        t.home_jitter_m = a.home_jitter_m.or(self.home_jitter_m).unwrap_or(t.home_jitter_m);
        if let Some(m) = a.mode.or(choice::<ModeArg>("mode", &self.mode)?) {
            t.mode = mode_of(m);
        }
        if let Some(d) = a.start_day.clone().or(self.start_day.clone()) {
            t.start_day = d;
        }
        Ok(c)
    }

    pub fn sensitivity(&self, a: &SensitivityArgs) -> Result<SensitivityConfig, PipelineError> {
        let base = self.analyze(&a.analyze)?;
        let r_list = if !a.r_list.is_empty() {
            a.r_list.clone()
        } else {
            self.r_list.clone().unwrap_or_else(|| DEFAULT_SWEEP_M.to_vec())
        };
        let methods: Vec<ClusterMethod> = if !a.methods.is_empty() {
            a.methods.iter().map(|&m| m.into()).collect()
        } else if let Some(ms) = &self.methods {
            ms.iter()
                .map(|m| ClusterMethod::from_str(m).map_err(invalid))
                .collect::<Result<_, _>>()?
        } else {
            vec![base.cluster_method]
        };
        Ok(SensitivityConfig { base, r_list, methods })
    }
}
