use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::report;
use super::{pretty, FailureKind, Manifest, PipelineError, PipelineResult, Stage};
use crate::clustering::{
    homes_of, key_clusters, mixed_clusters, spatial_clusters, Cluster, ClusterMethod,
    ClusteringError, KeyingParams, SchoolIndex, SpatialClustering, DEFAULT_CLUSTER_SIZE_M,
    DEFAULT_MIN_CLUSTER_SIZE, DEFAULT_WINDOW_MIN,
};
use crate::equilibration::{
    build_histories, consistent_clusters, fastest_persistence, mode_consistency,
    route_consistency_rate, PersistenceReport, RouteConsistencyReport,
};
use crate::freeflow::{
    ExternalDirections, FixtureTransport, FreeFlowError, FreeFlowProvider, HttpTransport,
    OfflineNetwork, RetryPolicy, RouteCache, Transport, API_KEY_ENV,
};
use crate::geometry::{ContourParams, DEFAULT_BAND_WIDTH_M};
use crate::model::io::{load_dataset, IngestError, IngestReport};
use crate::model::{trim_percentiles_by, Dataset, ModelError, TrimMetric};
use crate::regret::{cross_mode_regret, imitation_regret, regret_ccdf, summarize, Ccdf, RegretSummary, RegretTable};
use crate::simulator::RoadNetwork;
use crate::soc::{
    free_flow_durations, lost_hours, poa_soc_corollary, reference_lost_hours,
    stress_of_catastrophe, FreeFlowConfig, FreeFlowRun, SocError, SocReport, DEFAULT_CONCURRENCY,
    QUARTIC_POA_BOUND, REFERENCE_COMMUTERS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderChoice {
    #[default]
    None,
    Offline,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeFlowSettings {
    pub provider: ProviderChoice,
    /// `network.json` for the offline provider.
    pub network: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    /// Earlier cache files merged by taking the minimum per key.
    pub min_over_runs: Vec<PathBuf>,
    pub endpoint: Option<String>,
    /// Replay recorded exchanges instead of calling the endpoint.
    pub fixtures: Option<PathBuf>,
    pub optimistic: bool,
    pub concurrency: usize,
    pub max_attempts: u32,
    pub timeout_s: u64,
}

impl Default for FreeFlowSettings {
    fn default() -> Self {
        FreeFlowSettings {
            provider: ProviderChoice::None,
            network: None,
            cache: None,
            min_over_runs: Vec::new(),
            endpoint: None,
            fixtures: None,
            optimistic: true,
            concurrency: DEFAULT_CONCURRENCY,
            max_attempts: RetryPolicy::default().max_attempts,
            timeout_s: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub trips: PathBuf,
    pub schools: PathBuf,
    pub out_dir: PathBuf,
    pub cluster_method: ClusterMethod,
    pub cluster_size_m: f64,
    pub window_min: f64,
    pub min_cluster_size: usize,
    pub band_width_m: f64,
    pub trim_low_pct: f64,
    pub trim_high_pct: f64,
    pub trim_metric: TrimMetric,
    /// Count baseline (zero-regret) trips in the regret distribution.
    pub include_baselines: bool,
    pub utc_offset_s: Option<i64>,
    /// Simulator sidecar; enables the PoA ≤ SoC check.
    pub ground_truth: Option<PathBuf>,
    pub seed: u64,
    pub freeflow: FreeFlowSettings,
}

impl AnalyzeConfig {
    pub fn new(trips: impl Into<PathBuf>, schools: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        AnalyzeConfig {
            trips: trips.into(),
            schools: schools.into(),
            out_dir: out_dir.into(),
            cluster_method: ClusterMethod::Ball,
            cluster_size_m: DEFAULT_CLUSTER_SIZE_M,
            window_min: DEFAULT_WINDOW_MIN,
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
            band_width_m: DEFAULT_BAND_WIDTH_M,
            trim_low_pct: 5.0,
            trim_high_pct: 95.0,
            trim_metric: TrimMetric::Duration,
            include_baselines: false,
            utc_offset_s: None,
            ground_truth: None,
            seed: 0,
            freeflow: FreeFlowSettings::default(),
        }
    }

    fn keying(&self) -> KeyingParams {
        KeyingParams {
            window_min: self.window_min,
            min_size: self.min_cluster_size,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub ingest: IngestReport,
    pub clusters: usize,
    pub regret_table: RegretTable,
    pub regret_summary: Option<RegretSummary>,
    pub ccdf: Option<Ccdf>,
    pub route_consistency: RouteConsistencyReport,
    pub persistence: PersistenceReport,
    pub freeflow: Option<FreeFlowRun>,
    pub soc: Option<SocReport>,
}

fn cluster_err(e: ClusteringError) -> PipelineError {
    PipelineError::invalid(Stage::Cluster, e)
}

fn ingest_err(e: IngestError) -> PipelineError {
    match e {
        IngestError::EmptyDataset => PipelineError::invalid(Stage::Ingest, "empty dataset"),
        other => PipelineError::invalid(Stage::Ingest, other),
    }
}

fn soc_err(stage: Stage, e: SocError) -> PipelineError {
    let kind = match &e {
        SocError::Provider(FreeFlowError::Cache { .. }) => FailureKind::InvalidInput,
        SocError::Provider(_) => FailureKind::Provider,
        SocError::NoMatchedTrips | SocError::InvalidConcurrency => FailureKind::InvalidInput,
        SocError::MissingCluster(_) => FailureKind::Internal,
    };
    PipelineError::new(stage, kind, e)
}

fn write(path: &Path, text: &str) -> PipelineResult<()> {
    std::fs::write(path, text)
        .map_err(|e| PipelineError::internal(Stage::Report, format!("{}: {e}", path.display())))
}

fn check_settings(cfg: &AnalyzeConfig) -> PipelineResult<()> {
    let bad = |m: String| Err(PipelineError::invalid(Stage::Config, m));
    for p in [&cfg.trips, &cfg.schools] {
        if !p.exists() {
            return bad(format!("input {} does not exist", p.display()));
        }
    }
    if !(cfg.cluster_size_m > 0.0 && cfg.cluster_size_m.is_finite()) {
        return bad(format!("cluster size must be positive, got {}", cfg.cluster_size_m));
    }
    if !(cfg.window_min > 0.0) {
        return bad(format!("window must be positive, got {}", cfg.window_min));
    }
    ContourParams::new(cfg.band_width_m).map_err(|e| PipelineError::invalid(Stage::Config, e))?;
    if !(0.0 <= cfg.trim_low_pct && cfg.trim_low_pct < cfg.trim_high_pct && cfg.trim_high_pct <= 100.0) {
        return bad(format!(
            "invalid percentile bounds {} / {}",
            cfg.trim_low_pct, cfg.trim_high_pct
        ));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
        PipelineError::invalid(Stage::Config, format!("output dir {}: {e}", cfg.out_dir.display()))
    })
}

/// The configured free-flow provider, or `None` when free-flow estimation
/// is switched off.
pub fn build_provider(s: &FreeFlowSettings) -> PipelineResult<Option<Box<dyn FreeFlowProvider>>> {
    match s.provider {
        ProviderChoice::None => Ok(None),
        ProviderChoice::Offline => {
            let path = s.network.as_ref().ok_or_else(|| {
                PipelineError::invalid(Stage::Config, "the offline provider needs a network file")
            })?;
            let net = RoadNetwork::from_json_file(path).map_err(|e| PipelineError::invalid(Stage::Config, e))?;
            Ok(Some(Box::new(OfflineNetwork::new(net))))
        }
        ProviderChoice::External => {
            let transport: Box<dyn Transport> = match &s.fixtures {
                Some(f) => Box::new(
                    FixtureTransport::from_jsonl(f).map_err(|e| PipelineError::invalid(Stage::Config, e))?,
                ),
                None => Box::new(
                    HttpTransport::new(Duration::from_secs(s.timeout_s))
                        .map_err(|e| PipelineError::internal(Stage::Config, e))?,
                ),
            };
            let endpoint = match (&s.endpoint, &s.fixtures) {
                (Some(e), _) => e.clone(),
                (None, Some(_)) => "fixture://".to_string(),
                (None, None) => {
                    return Err(PipelineError::invalid(
                        Stage::Config,
                        "the external provider needs an endpoint URL",
                    ))
                }
            };
            let api_key = match std::env::var(API_KEY_ENV) {
                Ok(k) if !k.trim().is_empty() => k,
                // a replayed session carries no live credentials
                _ if s.fixtures.is_some() => String::new(),
                _ => {
                    return Err(PipelineError::new(
                        Stage::Config,
                        FailureKind::Provider,
                        FreeFlowError::MissingCredentials,
                    ))
                }
            };
            let mut p = ExternalDirections::new(endpoint, api_key, transport);
            p.retry.max_attempts = s.max_attempts.max(1);
            if s.fixtures.is_some() {
                p.retry = RetryPolicy::no_wait(p.retry.max_attempts);
            }
            Ok(Some(Box::new(p)))
        }
    }
}

fn open_cache(s: &FreeFlowSettings) -> PipelineResult<RouteCache> {
    match &s.cache {
        Some(p) => RouteCache::open(p, &s.min_over_runs).map_err(|e| PipelineError::invalid(Stage::FreeFlow, e)),
        None if s.min_over_runs.is_empty() => Ok(RouteCache::in_memory()),
        None => Err(PipelineError::invalid(
            Stage::Config,
            "merging earlier runs needs a cache file",
        )),
    }
}

fn load(cfg: &AnalyzeConfig, m: &mut Manifest) -> PipelineResult<(Dataset, IngestReport)> {
    m.input(&cfg.trips);
    m.input(&cfg.schools);
    load_dataset(&cfg.trips, &cfg.schools, cfg.utc_offset_s).map_err(ingest_err)
}

/// Regret over the clusters of one spatial clustering.
struct RegretStage {
    clusters: Vec<Cluster>,
    table: RegretTable,
    summary: Option<RegretSummary>,
    ccdf: Option<Ccdf>,
}

fn regret_stage(
    ds: &Dataset,
    spatial: &SpatialClustering,
    schools: &SchoolIndex,
    keying: KeyingParams,
    include_baselines: bool,
) -> PipelineResult<RegretStage> {
    let clusters = key_clusters(&ds.trips, spatial, schools, keying).map_err(cluster_err)?;
    let table = imitation_regret(&clusters);
    let (summary, ccdf) = if table.rows.is_empty() {
        (None, None)
    } else {
        let s = summarize(&table, clusters.len(), include_baselines)
            .map_err(|e| PipelineError::internal(Stage::Regret, e))?;
        let c = regret_ccdf(&table, s.population == "all")
            .map_err(|e| PipelineError::internal(Stage::Regret, e))?;
        (Some(s), Some(c))
    };
    Ok(RegretStage {
        clusters,
        table,
        summary,
        ccdf,
    })
}

fn regret_json(stage: &RegretStage, include_baselines: bool, cross: Value) -> Value {
    match &stage.summary {
        Some(s) => json!({
            "status": "ok",
            "include_baselines": include_baselines,
            "summary": s,
            "cross_mode": cross,
        }),
        None => json!({
            "status": "no_clusters",
            "include_baselines": include_baselines,
            "summary": Value::Null,
            "cross_mode": cross,
        }),
    }
}

fn read_poa(path: &Path) -> PipelineResult<(Option<f64>, Option<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::invalid(Stage::Config, format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| PipelineError::invalid(Stage::Config, format!("{}: {e}", path.display())))?;
    Ok((v["poa"].as_f64(), v["soc"].as_f64()))
}

pub fn run_analyze(cfg: &AnalyzeConfig) -> PipelineResult<AnalyzeOutcome> {
    let mut m = Manifest::new("analyze", &cfg.out_dir, cfg);
    let result = analyze_inner(cfg, &mut m);
    m.finish(result)
}

fn analyze_inner(cfg: &AnalyzeConfig, m: &mut Manifest) -> PipelineResult<AnalyzeOutcome> {
    check_settings(cfg)?;
    let provider = build_provider(&cfg.freeflow)?;
    let (ds, ingest) = load(cfg, m)?;
    m.runtime("ingest", serde_json::to_value(&ingest).unwrap_or(Value::Null));
    let schools = SchoolIndex::new(&ds.schools);
    let homes = homes_of(&ds.trips);
    let spatial = spatial_clusters(cfg.cluster_method, &homes, cfg.cluster_size_m).map_err(cluster_err)?;

    // Regret
    let regret = regret_stage(&ds, &spatial, &schools, cfg.keying(), cfg.include_baselines)?;
    let mixed = mixed_clusters(&ds.trips, &spatial, &schools, cfg.window_min).map_err(cluster_err)?;
    let mut cross = serde_json::to_value(cross_mode_regret(&mixed)).expect("serializes");
    if let Some(o) = cross.as_object_mut() {
        o.remove("details");
    }
    report::regret_table_csv(&m.out("regret_table.csv"), &regret.table)?;
    m.output("regret_table.csv");
    report::ccdf_csv(&m.out("regret_ccdf.csv"), regret.ccdf.as_ref())?;
    m.output("regret_ccdf.csv");
    write(&m.out("regret_summary.json"), &pretty(&regret_json(&regret, cfg.include_baselines, cross)))?;
    m.output("regret_summary.json");

    // Consistency
    let histories = build_histories(&ds.trips);
    let modes = mode_consistency(&histories.histories);
    let contour = ContourParams::new(cfg.band_width_m).map_err(|e| PipelineError::invalid(Stage::Config, e))?;
    let routes = route_consistency_rate(&histories.histories, contour);
    // Day-to-day cluster comparisons run on clustered trips with the
    // duration outliers removed.
    let clustered: BTreeSet<&str> = regret
        .clusters
        .iter()
        .flat_map(|c| c.trips.iter().map(|t| t.trip_id.as_str()))
        .collect();
    let in_clusters: Vec<_> = ds
        .trips
        .iter()
        .filter(|t| clustered.contains(t.trip_id.as_str()))
        .cloned()
        .collect();
    let trimmed = if in_clusters.is_empty() {
        Vec::new()
    } else {
        trim_percentiles_by(&in_clusters, cfg.trim_low_pct, cfg.trim_high_pct, cfg.trim_metric)
            .map_err(|e: ModelError| PipelineError::invalid(Stage::Consistency, e))?
    };
    let trimmed_clusters = key_clusters(&trimmed, &spatial, &schools, cfg.keying()).map_err(cluster_err)?;
    let set = consistent_clusters(&trimmed_clusters);
    let persistence = fastest_persistence(&set);
    let consistency = json!({
        "students": histories.histories.len() + histories.single_day_students,
        "single_day_students": histories.single_day_students,
        "mode_consistency": modes,
        "route_consistency": {
            "band_width_m": cfg.band_width_m,
            "evaluated": routes.evaluated,
            "consistent": routes.consistent,
            "rate": routes.rate,
            "excluded_mode_changes": routes.excluded_mode_changes,
            "excluded_too_few_trips": routes.excluded_too_few_trips,
            "excluded_geometry": routes.excluded_geometry,
        },
        "consistent_clusters": {
            "trips_in_clusters": in_clusters.len(),
            "trips_after_trim": trimmed.len(),
            "trim_pct": [cfg.trim_low_pct, cfg.trim_high_pct],
            "day_clusters": trimmed_clusters.len(),
            "candidates": set.candidates,
            "groups": set.groups.len(),
        },
        "fastest_persistence": {
            "groups": persistence.groups,
            "persisting": persistence.persisting,
            "fraction": persistence.fraction,
        },
    });
    write(&m.out("consistency_report.json"), &pretty(&consistency))?;
    m.output("consistency_report.json");
    report::students_csv(&m.out("consistency_students.csv"), &routes)?;
    m.output("consistency_students.csv");
    report::groups_csv(&m.out("consistency_groups.csv"), &persistence)?;
    m.output("consistency_groups.csv");

    // Free flow and SoC
    let (freeflow, soc) = match provider {
        None => {
            let doc = json!({"status": "skipped", "reason": "no free-flow provider configured"});
            write(&m.out("soc_report.json"), &pretty(&doc))?;
            report::histogram_csv(&m.out("deviation_histogram.csv"), &[])?;
            (None, None)
        }
        Some(provider) => {
            let cache = open_cache(&cfg.freeflow)?;
            // Free-flow queries are keyed by grid cells whatever method the
            // regret clusters use.
            let grid = if cfg.cluster_method == ClusterMethod::Grid {
                spatial.clone()
            } else {
                spatial_clusters(ClusterMethod::Grid, &homes, cfg.cluster_size_m).map_err(cluster_err)?
            };
            let ff_cfg = FreeFlowConfig {
                optimistic: cfg.freeflow.optimistic,
                concurrency: cfg.freeflow.concurrency,
            };
            let run = free_flow_durations(&ds.trips, provider.as_ref(), &grid, &schools, &cache, ff_cfg);
            m.runtime("freeflow_provider_calls", json!(provider.calls()));
            let run = run.map_err(|e| soc_err(Stage::FreeFlow, e))?;
            m.runtime(
                "freeflow",
                json!({
                    "distinct_keys": run.distinct_keys,
                    "cache_hits": run.cache_hits,
                    "provider_calls": run.provider_calls,
                    "cache": cfg.freeflow.cache,
                }),
            );
            let soc = stress_of_catastrophe(&ds.trips, &run.estimates).map_err(|e| soc_err(Stage::Soc, e))?;
            let truth = cfg.ground_truth.as_deref().map(read_poa).transpose()?;
            if let Some(p) = &cfg.ground_truth {
                m.input(p);
            }
            let corollary = truth
                .and_then(|(poa, _)| poa)
                .map(|poa| poa_soc_corollary(soc.soc_overall, poa));
            let sidecar = truth.and_then(|(_, s)| s).map(|s| {
                json!({"soc": s, "abs_diff": (s - soc.soc_overall).abs()})
            });
            let doc = json!({
                "status": "ok",
                "provider": provider.kind(),
                "optimistic": cfg.freeflow.optimistic,
                "trips_estimated": run.estimates.len(),
                "trips_dropped": run.dropped.len(),
                "dropped": run.dropped,
                "distinct_keys": run.distinct_keys,
                "report": soc,
                "corollary": corollary,
                "ground_truth": sidecar,
                "lost_hours": {
                    "reference": reference_lost_hours(),
                    "this_dataset": lost_hours(QUARTIC_POA_BOUND, soc.soc_overall, soc.mean_freeflow_s / 60.0, REFERENCE_COMMUTERS),
                },
            });
            write(&m.out("soc_report.json"), &pretty(&doc))?;
            report::histogram_csv(&m.out("deviation_histogram.csv"), &soc.deviation_histogram)?;
            report::estimates_csv(&m.out("freeflow_estimates.csv"), &run.estimates)?;
            m.output("freeflow_estimates.csv");
            (Some(run), Some(soc))
        }
    };
    m.output("soc_report.json");
    m.output("deviation_histogram.csv");

    Ok(AnalyzeOutcome {
        ingest,
        clusters: regret.clusters.len(),
        regret_table: regret.table,
        regret_summary: regret.summary,
        ccdf: regret.ccdf,
        route_consistency: routes,
        persistence,
        freeflow,
        soc,
    })
}

/// Validates the inputs and writes `ingest_report.json`; rejected lines
/// go next to the trips file.
pub fn run_ingest(cfg: &AnalyzeConfig) -> PipelineResult<IngestReport> {
    let mut m = Manifest::new("ingest", &cfg.out_dir, cfg);
    let result = (|| {
        std::fs::create_dir_all(&cfg.out_dir)
            .map_err(|e| PipelineError::invalid(Stage::Config, format!("{}: {e}", cfg.out_dir.display())))?;
        let (ds, report) = load(cfg, &mut m)?;
        let doc = json!({
            "report": report,
            "students": ds.trips.iter().map(|t| t.student_id.as_str()).collect::<BTreeSet<_>>().len(),
            "days": ds.trips.iter().map(|t| t.day.as_str()).collect::<BTreeSet<_>>(),
            "schools": ds.schools.len(),
            "problems": ds.check(),
        });
        write(&m.out("ingest_report.json"), &pretty(&doc))?;
        m.output("ingest_report.json");
        Ok(report)
    })();
    m.finish(result)
}

/// Fills the free-flow cache for every (cell, school, mode) of a dataset
/// and writes the per-trip estimates.
pub fn run_freeflow_fetch(cfg: &AnalyzeConfig) -> PipelineResult<FreeFlowRun> {
    let mut m = Manifest::new("freeflow-fetch", &cfg.out_dir, cfg);
    let result = (|| {
        check_settings(cfg)?;
        let provider = build_provider(&cfg.freeflow)?.ok_or_else(|| {
            PipelineError::invalid(Stage::Config, "freeflow-fetch needs a free-flow provider")
        })?;
        let cache = open_cache(&cfg.freeflow)?;
        let (ds, _) = load(cfg, &mut m)?;
        let grid = spatial_clusters(ClusterMethod::Grid, &homes_of(&ds.trips), cfg.cluster_size_m)
            .map_err(cluster_err)?;
        let ff_cfg = FreeFlowConfig {
            optimistic: cfg.freeflow.optimistic,
            concurrency: cfg.freeflow.concurrency,
        };
        let run = free_flow_durations(&ds.trips, provider.as_ref(), &grid, &SchoolIndex::new(&ds.schools), &cache, ff_cfg);
        m.runtime("freeflow_provider_calls", json!(provider.calls()));
        let run = run.map_err(|e| soc_err(Stage::FreeFlow, e))?;
        m.runtime(
            "freeflow",
            json!({
                "distinct_keys": run.distinct_keys,
                "cache_hits": run.cache_hits,
                "provider_calls": run.provider_calls,
                "dropped": run.dropped.len(),
                "cache_entries": cache.len(),
            }),
        );
        report::estimates_csv(&m.out("freeflow_estimates.csv"), &run.estimates)?;
        m.output("freeflow_estimates.csv");
        Ok(run)
    })();
    m.finish(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub base: AnalyzeConfig,
    pub r_list: Vec<f64>,
    pub methods: Vec<ClusterMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityPoint {
    pub method: ClusterMethod,
    pub r_m: f64,
    pub clusters: usize,
    pub summary: Option<RegretSummary>,
    #[serde(skip)]
    pub ccdf: Option<Ccdf>,
    pub ccdf_file: String,
}

fn r_label(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        r.to_string().replace('.', "p")
    }
}

/// Regret CCDF and summary for every (method, r) pair.
pub fn run_sensitivity(cfg: &SensitivityConfig) -> PipelineResult<Vec<SensitivityPoint>> {
    let mut m = Manifest::new("sensitivity", &cfg.base.out_dir, cfg);
    let result = (|| {
        if cfg.r_list.is_empty() || cfg.methods.is_empty() {
            return Err(PipelineError::invalid(Stage::Config, "need at least one cluster size and method"));
        }
        if let Some(r) = cfg.r_list.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(PipelineError::invalid(Stage::Config, format!("cluster size must be positive, got {r}")));
        }
        check_settings(&cfg.base)?;
        let (ds, _) = load(&cfg.base, &mut m)?;
        let schools = SchoolIndex::new(&ds.schools);
        let homes = homes_of(&ds.trips);
        let mut points = Vec::new();
        for &method in &cfg.methods {
            for &r in &cfg.r_list {
                let spatial = spatial_clusters(method, &homes, r).map_err(cluster_err)?;
                let stage = regret_stage(&ds, &spatial, &schools, cfg.base.keying(), cfg.base.include_baselines)?;
                let name = format!("regret_ccdf_{method}_{}.csv", r_label(r));
                report::ccdf_csv(&m.out(&name), stage.ccdf.as_ref())?;
                m.output(&name);
                points.push(SensitivityPoint {
                    method,
                    r_m: r,
                    clusters: stage.clusters.len(),
                    summary: stage.summary,
                    ccdf: stage.ccdf,
                    ccdf_file: name,
                });
            }
        }
        write(&m.out("sensitivity_summary.json"), &pretty(&points))?;
        m.output("sensitivity_summary.json");
        Ok(points)
    })();
    m.finish(result)
}
