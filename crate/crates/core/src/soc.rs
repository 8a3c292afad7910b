//! Stress of catastrophe: recorded trip cost over free-flow trip cost.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{SchoolIndex, SpatialClustering};
use crate::freeflow::{CacheKey, FreeFlowError, FreeFlowProvider, ProviderKind, RouteCache};
use crate::model::{effective_mode, GeoPoint, Mode, ModeClass, TripRecord};

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.1;
/// Bins cover `[0, 3.0)` in steps of 0.1; the last one is open-ended.
pub const HISTOGRAM_BINS: usize = 30;
pub const DEFAULT_CONCURRENCY: usize = 4;

/// Worst-case PoA of quartic (BPR) latencies, the bound used by the
/// lost-hours illustration.
pub const QUARTIC_POA_BOUND: f64 = 2.151;
/// Worked-example constants: a city-wide SoC of 1.34, a 21-minute mean
/// free-flow trip and 2.2 million workers plus 400,000 students on the road.
pub const REFERENCE_SOC: f64 = 1.34;
pub const REFERENCE_MEAN_FREEFLOW_MIN: f64 = 21.0;
pub const REFERENCE_COMMUTERS: f64 = 2_600_000.0;

#[derive(Debug, Error)]
pub enum SocError {
    #[error("no trip matches a free-flow estimate")]
    NoMatchedTrips,
    #[error("trip {0} has no spatial cluster")]
    MissingCluster(String),
    #[error("concurrency must be at least 1")]
    InvalidConcurrency,
    #[error(transparent)]
    Provider(#[from] FreeFlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeFlowSource {
    ExternalApi,
    OfflineShortestPath,
    ClampedToRecorded,
}

impl From<ProviderKind> for FreeFlowSource {
    fn from(k: ProviderKind) -> Self {
        match k {
            ProviderKind::ExternalApi => FreeFlowSource::ExternalApi,
            ProviderKind::OfflineShortestPath => FreeFlowSource::OfflineShortestPath,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeFlowEstimate {
    pub trip_id: String,
    /// Never above the trip's recorded duration.
    pub freeflow_duration: f64,
    pub source: FreeFlowSource,
    pub centroid_used: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedTrip {
    pub trip_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeFlowConfig {
    pub optimistic: bool,
    /// Maximum in-flight provider requests.
    pub concurrency: usize,
}

impl Default for FreeFlowConfig {
    fn default() -> Self {
        FreeFlowConfig {
            optimistic: true,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeFlowRun {
    pub estimates: Vec<FreeFlowEstimate>,
    pub dropped: Vec<DroppedTrip>,
    pub distinct_keys: usize,
    pub cache_hits: usize,
    pub provider_calls: usize,
}

struct KeyQuery {
    key: CacheKey,
    origin: GeoPoint,
    dest: GeoPoint,
}

/// One estimate per trip from the route between its home cluster's centroid
/// and its school. The provider is asked at most once per (cell, school,
/// mode); misses run on up to `cfg.concurrency` threads and are stored in
/// key order, so the cache file does not depend on completion order.
///
/// Routes the provider cannot find drop their trips. Any other provider
/// failure aborts after the successful answers have been cached.
pub fn free_flow_durations(
    trips: &[TripRecord],
    provider: &dyn FreeFlowProvider,
    spatial: &SpatialClustering,
    schools: &SchoolIndex,
    cache: &RouteCache,
    cfg: FreeFlowConfig,
) -> Result<FreeFlowRun, SocError> {
    if cfg.concurrency == 0 {
        return Err(SocError::InvalidConcurrency);
    }
    let mut trip_keys = Vec::with_capacity(trips.len());
    let mut queries: BTreeMap<CacheKey, KeyQuery> = BTreeMap::new();
    for t in trips {
        let id = spatial
            .cluster_of(&t.trip_id)
            .ok_or_else(|| SocError::MissingCluster(t.trip_id.clone()))?;
        let (cell, centroid) = spatial
            .cell_label(id)
            .zip(spatial.centroids.get(&id).copied())
            .ok_or_else(|| SocError::MissingCluster(t.trip_id.clone()))?;
        let school = schools.canonical(&t.school_id).unwrap_or(&t.school_id).to_string();
        let dest = schools.location(&t.school_id).unwrap_or_else(|| t.destination());
        let key = CacheKey {
            cell,
            school_id: school,
            mode: effective_mode(t),
        };
        queries.entry(key.clone()).or_insert(KeyQuery {
            key: key.clone(),
            origin: centroid,
            dest,
        });
        trip_keys.push((key, centroid));
    }

    let snapshot = cache.snapshot();
    let misses: Vec<&KeyQuery> = queries
        .values()
        .filter(|q| !snapshot.contains_key(&q.key))
        .collect();
    let cache_hits = queries.len() - misses.len();
    let calls_before = provider.calls();

    let answers: Mutex<Vec<Option<Result<f64, FreeFlowError>>>> =
        Mutex::new((0..misses.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.concurrency.min(misses.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = misses.get(i) else { break };
                let r = provider.query_route(q.origin, q.dest, q.key.mode, cfg.optimistic);
                answers.lock().expect("answers lock")[i] = Some(r);
            });
        }
    });

    let mut durations: BTreeMap<&CacheKey, Result<f64, String>> = snapshot
        .iter()
        .filter(|(k, _)| queries.contains_key(*k))
        .map(|(k, &d)| (k, Ok(d)))
        .collect();
    let mut fatal = None;
    for (q, answer) in misses.iter().zip(answers.into_inner().expect("answers lock")) {
        match answer.expect("every miss is answered") {
            Ok(d) => {
                durations.insert(&q.key, Ok(cache.insert(q.key.clone(), d)?));
            }
            Err(e) if e.is_droppable() => {
                log::info!("dropping {}/{}/{}: {e}", q.key.cell, q.key.school_id, q.key.mode);
                durations.insert(&q.key, Err(e.to_string()));
            }
            Err(e) => {
                fatal.get_or_insert(e);
            }
        }
    }
    if let Some(e) = fatal {
        return Err(e.into());
    }

    let source = FreeFlowSource::from(provider.kind());
    let mut estimates = Vec::new();
    let mut dropped = Vec::new();
    for (t, (key, centroid)) in trips.iter().zip(trip_keys) {
        match &durations[&key] {
            Ok(d) => {
                let recorded = t.duration();
                let (freeflow_duration, source) = if *d > recorded {
                    (recorded, FreeFlowSource::ClampedToRecorded)
                } else {
                    (*d, source)
                };
                estimates.push(FreeFlowEstimate {
                    trip_id: t.trip_id.clone(),
                    freeflow_duration,
                    source,
                    centroid_used: centroid,
                });
            }
            Err(reason) => dropped.push(DroppedTrip {
                trip_id: t.trip_id.clone(),
                reason: reason.clone(),
            }),
        }
    }
    Ok(FreeFlowRun {
        estimates,
        dropped,
        distinct_keys: queries.len(),
        cache_hits,
        provider_calls: provider.calls() - calls_before,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SocTotals {
    pub soc: f64,
    pub trips: usize,
    pub recorded_s: f64,
    pub freeflow_s: f64,
}

impl SocTotals {
    fn add(&mut self, recorded: f64, freeflow: f64) {
        self.trips += 1;
        self.recorded_s += recorded;
        self.freeflow_s += freeflow;
        self.soc = self.recorded_s / self.freeflow_s;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    /// `None` for the open last bin.
    pub bin_hi: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SocReport {
    pub soc_overall: f64,
    pub overall: SocTotals,
    pub soc_by_mode: BTreeMap<Mode, SocTotals>,
    pub soc_by_class: BTreeMap<ModeClass, SocTotals>,
    pub soc_by_day: BTreeMap<String, SocTotals>,
    pub sources: BTreeMap<FreeFlowSource, usize>,
    pub mean_recorded_s: f64,
    pub mean_freeflow_s: f64,
    /// Estimates whose trip id is not among the trips.
    pub unmatched_estimates: usize,
    /// Bins of (recorded − freeflow) / freeflow.
    pub deviation_histogram: Vec<HistogramBin>,
}

fn histogram_bin(deviation: f64) -> usize {
    // the epsilon keeps values like 0.3 (= 0.29999...) in their nominal bin
    ((deviation / HISTOGRAM_BIN_WIDTH + 1e-9).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// SoC = Σ recorded / Σ free-flow over trips with an estimate, overall and
/// split by mode, mode class and day.
pub fn stress_of_catastrophe(
    trips: &[TripRecord],
    estimates: &[FreeFlowEstimate],
) -> Result<SocReport, SocError> {
    let by_id: BTreeMap<&str, &FreeFlowEstimate> =
        estimates.iter().map(|e| (e.trip_id.as_str(), e)).collect();
    let mut overall = SocTotals::default();
    let mut by_mode: BTreeMap<Mode, SocTotals> = BTreeMap::new();
    let mut by_class: BTreeMap<ModeClass, SocTotals> = BTreeMap::new();
    let mut by_day: BTreeMap<String, SocTotals> = BTreeMap::new();
    let mut sources: BTreeMap<FreeFlowSource, usize> = BTreeMap::new();
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    let mut matched = BTreeSet::new();
    for t in trips {
        let Some(e) = by_id.get(t.trip_id.as_str()) else { continue };
        if !matched.insert(t.trip_id.as_str()) {
            continue;
        }
        let recorded = t.duration();
        let freeflow = e.freeflow_duration.min(recorded);
        let mode = effective_mode(t);
        overall.add(recorded, freeflow);
        by_mode.entry(mode).or_default().add(recorded, freeflow);
        by_class.entry(mode.class()).or_default().add(recorded, freeflow);
        by_day.entry(t.day.clone()).or_default().add(recorded, freeflow);
        *sources.entry(e.source).or_default() += 1;
        counts[histogram_bin((recorded - freeflow) / freeflow)] += 1;
    }
    if overall.trips == 0 {
        return Err(SocError::NoMatchedTrips);
    }
    let n = overall.trips as f64;
    Ok(SocReport {
        soc_overall: overall.soc,
        overall,
        soc_by_mode: by_mode,
        soc_by_class: by_class,
        soc_by_day: by_day,
        sources,
        mean_recorded_s: overall.recorded_s / n,
        mean_freeflow_s: overall.freeflow_s / n,
        unmatched_estimates: estimates.len() - matched.len(),
        deviation_histogram: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                bin_lo: i as f64 * HISTOGRAM_BIN_WIDTH,
                bin_hi: (i + 1 < HISTOGRAM_BINS).then(|| (i + 1) as f64 * HISTOGRAM_BIN_WIDTH),
                count,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorollaryCheck {
    pub poa: f64,
    pub soc: f64,
    pub passes: bool,
}

/// PoA never exceeds SoC: free-flow durations bound the optimum from below.
pub fn poa_soc_corollary(soc: f64, poa: f64) -> CorollaryCheck {
    CorollaryCheck {
        poa,
        soc,
        passes: poa <= soc + 1e-9,
    }
}

/// How much time a city loses if its traffic could get as bad as the
/// quartic PoA bound allows, relative to what the measured SoC shows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LostHours {
    pub poa_bound: f64,
    pub soc: f64,
    pub mean_freeflow_min: f64,
    pub commuters: f64,
    /// (poa_bound − soc) · mean free-flow; negative when SoC is above the bound.
    pub extra_min_per_commuter: f64,
    pub lost_hours_per_day: f64,
}

pub fn lost_hours(poa_bound: f64, soc: f64, mean_freeflow_min: f64, commuters: f64) -> LostHours {
    let extra = (poa_bound - soc) * mean_freeflow_min;
    LostHours {
        poa_bound,
        soc,
        mean_freeflow_min,
        commuters,
        extra_min_per_commuter: extra,
        lost_hours_per_day: extra * commuters / 60.0,
    }
}

pub fn reference_lost_hours() -> LostHours {
    lost_hours(
        QUARTIC_POA_BOUND,
        REFERENCE_SOC,
        REFERENCE_MEAN_FREEFLOW_MIN,
        REFERENCE_COMMUTERS,
    )
}
