//! Synthetic trips sampled from an assignment, with ground truth.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::assignment::{free_flow_time, path_latencies, Assignment, CostKind};
use super::{DemandMatrix, RoadNetwork, SimError};
use crate::geometry::{unproject, PlanarPoint};
use crate::model::io::TripsHeader;
use crate::model::{Dataset, GeoPoint, Mode, TripPoint, TripRecord};

/// Durations are multiples of this, so `epoch + duration` is exact in f64.
pub const DURATION_QUANTUM_S: f64 = 1.0 / 1024.0;
pub const DEFAULT_START_DAY: &str = "2016-11-14";
pub const DEFAULT_UTC_OFFSET_S: i64 = 8 * 3600;
pub const DEFAULT_HOME_JITTER_M: f64 = 100.0;
const HOME_STREAM: u64 = 0xFFFF;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceParams {
    pub n_agents: usize,
    /// Standard deviation of the per-trip duration noise, seconds.
    pub sigma_s: f64,
    pub days: usize,
    pub seed: u64,
    /// Homes are drawn uniformly in a disc of this radius about the origin node.
    pub home_jitter_m: f64,
    pub mode: Mode,
    pub start_day: String,
    pub utc_offset_s: i64,
    /// Local seconds-of-day of the earliest departure.
    pub depart_base_s: u32,
    /// Departures are spread uniformly over this many seconds.
    pub depart_spread_s: u32,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            n_agents: 100,
            sigma_s: 0.0,
            days: 1,
            seed: 0,
            home_jitter_m: DEFAULT_HOME_JITTER_M,
            mode: Mode::Car,
            start_day: DEFAULT_START_DAY.into(),
            utc_offset_s: DEFAULT_UTC_OFFSET_S,
            depart_base_s: 7 * 3600,
            depart_spread_s: 900,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthTrip {
    pub trip_id: String,
    pub day: String,
    pub commodity: usize,
    /// Index of the path within the assignment's path list.
    pub path: usize,
    pub path_latency_s: f64,
    pub recorded_s: f64,
    /// Zero-load shortest-path time, at least 1 s, clamped to `recorded_s`.
    pub freeflow_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub instance: String,
    pub flow: CostKind,
    pub poa: Option<f64>,
    pub equilibrium_cost: Option<f64>,
    pub optimum_cost: Option<f64>,
    pub params: TraceParams,
    /// `Σ recorded / Σ freeflow` over all generated trips.
    pub soc: f64,
    pub soc_by_day: BTreeMap<String, f64>,
    pub trips: Vec<TruthTrip>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub dataset: Dataset,
    pub header: TripsHeader,
    pub truth: GroundTruth,
}

/// Splits `n` into integer parts proportional to `weights` by the largest
/// remainder method; ties go to the lower index.
pub fn apportion(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

fn rng_for(seed: u64, agent: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((agent as u64) << 16) | stream);
    rng
}

fn quantize(seconds: f64) -> f64 {
    (seconds / DURATION_QUANTUM_S).round() * DURATION_QUANTUM_S
}

fn truncated_noise(rng: &mut ChaCha8Rng, sigma: f64, base: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    for _ in 0..1000 {
        let z = normal.sample(rng);
        if z.abs() <= 3.0 * sigma && base + z > 0.0 {
            return z;
        }
    }
    0.0
}

fn jittered(rng: &mut ChaCha8Rng, center: GeoPoint, radius: f64) -> GeoPoint {
    if radius <= 0.0 {
        return center;
    }
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    unproject(
        PlanarPoint {
            x: r * theta.cos(),
            y: r * theta.sin(),
        },
        center,
    )
}

pub fn school_id(net: &RoadNetwork, node: usize) -> String {
    format!("school-{}", net.node_id(node))
}

/// Samples `n_agents` commuters onto the used paths of `assignment` and
/// emits `days` trips for each. Agents keep their home and path across
/// days; only the duration noise and the departure minute change.
pub fn generate_traces(
    instance: &str,
    net: &RoadNetwork,
    demands: &DemandMatrix,
    assignment: &Assignment,
    params: &TraceParams,
) -> Result<TraceSet, SimError> {
    let invalid = |m: &str| Err(SimError::InvalidTraceParams(m.into()));
    if params.n_agents == 0 {
        return invalid("n_agents must be >= 1");
    }
    if params.days == 0 {
        return invalid("days must be >= 1");
    }
    if params.days >= HOME_STREAM as usize {
        return invalid("too many days");
    }
    if !(params.sigma_s >= 0.0 && params.sigma_s.is_finite()) {
        return invalid("sigma must be finite and >= 0");
    }
    if !(params.home_jitter_m >= 0.0) {
        return invalid("home jitter must be >= 0");
    }
    let start = NaiveDate::parse_from_str(&params.start_day, "%Y-%m-%d")
        .map_err(|e| SimError::InvalidTraceParams(format!("start_day: {e}")))?;

    let active: Vec<usize> = (0..demands.demands.len())
        .filter(|&k| demands.demands[k].rate > 0.0)
        .collect();
    if params.n_agents < active.len() {
        return Err(SimError::InsufficientAgents {
            n_agents: params.n_agents,
            commodities: active.len(),
        });
    }
    let latencies = path_latencies(net, assignment);
    let rates: Vec<f64> = active.iter().map(|&k| demands.demands[k].rate).collect();
    let per_commodity = apportion(&rates, params.n_agents);

    // (commodity, path index, path latency) per agent
    let mut agents: Vec<(usize, usize, f64)> = Vec::with_capacity(params.n_agents);
    for (slot, &k) in active.iter().enumerate() {
        let paths: Vec<usize> = (0..assignment.paths.len())
            .filter(|&i| assignment.paths[i].commodity == k && assignment.paths[i].flow > 0.0)
            .collect();
        let d = demands.demands[k];
        if paths.is_empty() {
            return Err(SimError::InfeasibleFlow {
                origin: net.node_id(d.origin).to_string(),
                destination: net.node_id(d.destination).to_string(),
            });
        }
        // Used paths whose latencies agree to solver precision are tied.
        let best = paths.iter().map(|&i| latencies[i]).fold(f64::INFINITY, f64::min);
        let flows: Vec<f64> = paths.iter().map(|&i| assignment.paths[i].flow).collect();
        for (j, count) in apportion(&flows, per_commodity[slot]).into_iter().enumerate() {
            let i = paths[j];
            let lat = if (latencies[i] - best).abs() <= 1e-9 * best.abs().max(1.0) {
                best
            } else {
                latencies[i]
            };
            agents.extend(std::iter::repeat_n((k, i, lat), count));
        }
    }

    let width = (params.n_agents.max(2) - 1).to_string().len().max(4);
    let mut trips = Vec::with_capacity(agents.len() * params.days);
    let mut truth = Vec::with_capacity(agents.len() * params.days);
    let mut schools = BTreeMap::new();
    for (a, &(k, pi, lat)) in agents.iter().enumerate() {
        let d = demands.demands[k];
        let path = &assignment.paths[pi];
        let home = jittered(
            &mut rng_for(params.seed, a, HOME_STREAM),
            net.nodes()[d.origin].loc,
            params.home_jitter_m,
        );
        let school = school_id(net, d.destination);
        schools.insert(school.clone(), net.nodes()[d.destination].loc);
        let edge_lat = assignment.flow.latencies(net);
        let cum: Vec<f64> = path
            .edges
            .iter()
            .scan(0.0, |acc, &e| {
                *acc += edge_lat[e];
                Some(*acc)
            })
            .collect();
        let free = free_flow_time(net, d.origin, d.destination)
            .ok_or_else(|| SimError::Unreachable {
                origin: net.node_id(d.origin).to_string(),
                destination: net.node_id(d.destination).to_string(),
            })?
            .max(1.0);
        let student = format!("agent-{a:0width$}");
        for day in 0..params.days {
            let mut rng = rng_for(params.seed, a, day as u64);
            let date = start + chrono::Duration::days(day as i64);
            let midnight = date
                .and_hms_opt(0, 0, 0)
                .expect("midnight exists")
                .and_utc()
                .timestamp()
                - params.utc_offset_s;
            let offset = if params.depart_spread_s > 0 {
                rng.random_range(0..params.depart_spread_s)
            } else {
                0
            };
            let t0 = (midnight + params.depart_base_s as i64 + offset as i64) as f64;
            let noise = truncated_noise(&mut rng, params.sigma_s, lat);
            let duration = quantize(lat + noise).max(1.0);

            // Intermediate fixes are spaced by cumulative edge latency, with
            // a small floor so zero-latency edges keep timestamps increasing.
            let n = cum.len();
            let total = cum.last().copied().unwrap_or(0.0);
            let eta = total.max(1.0) / (10.0 * n as f64);
            let mut points = Vec::with_capacity(n + 1);
            points.push(TripPoint { t: t0, loc: home });
            for (j, &node) in path.nodes.iter().enumerate().skip(1) {
                let t = if j == n {
                    t0 + duration
                } else {
                    let f = (cum[j - 1] + j as f64 * eta) / (total + n as f64 * eta);
                    t0 + duration * f
                };
                points.push(TripPoint {
                    t,
                    loc: net.nodes()[node].loc,
                });
            }
            let trip_id = format!("{student}-d{day}");
            let day_str = date.format("%Y-%m-%d").to_string();
            truth.push(TruthTrip {
                trip_id: trip_id.clone(),
                day: day_str.clone(),
                commodity: k,
                path: pi,
                path_latency_s: lat,
                recorded_s: duration,
                freeflow_s: free.min(duration),
            });
            trips.push(TripRecord {
                trip_id,
                student_id: student.clone(),
                day: day_str,
                school_id: school.clone(),
                mode: params.mode,
                points,
                depart_time: (params.depart_base_s + offset) as f64,
                per_mode_distance: None,
            });
        }
    }

    let mut sums: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for t in &truth {
        let e = sums.entry(t.day.clone()).or_default();
        e.0 += t.recorded_s;
        e.1 += t.freeflow_s;
    }
    let (rec, free) = sums.values().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(TraceSet {
        dataset: Dataset { trips, schools },
        header: TripsHeader {
            utc_offset_s: params.utc_offset_s,
        },
        truth: GroundTruth {
            instance: instance.to_string(),
            flow: assignment.kind,
            poa: None,
            equilibrium_cost: None,
            optimum_cost: None,
            params: params.clone(),
            soc: rec / free,
            soc_by_day: sums.into_iter().map(|(d, (r, f))| (d, r / f)).collect(),
            trips: truth,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_trip;
    use crate::simulator::assignment::{frank_wolfe_equilibrium, social_optimum, AssignmentParams};
    use crate::simulator::builtin::{self, Builtin};
    use proptest::prelude::*;

    #[test]
    fn apportion_is_exact_and_proportional() {
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[0.5, 0.5], 2), vec![1, 1]);
        assert_eq!(apportion(&[3.0, 0.0], 5), vec![5, 0]);
    }

    proptest! {
        #[test]
        fn apportion_sums_to_n(w in prop::collection::vec(0.01f64..10.0, 1..12), n in 0usize..500) {
            let parts = apportion(&w, n);
            prop_assert_eq!(parts.iter().sum::<usize>(), n);
            let total: f64 = w.iter().sum();
            for (p, wi) in parts.iter().zip(&w) {
                prop_assert!((*p as f64 - wi / total * n as f64).abs() < 1.0 + 1e-9);
            }
        }
    }

    fn pigou_traces(p: u32, optimum: bool, params: &TraceParams) -> TraceSet {
        let net = builtin::pigou(p, 1.0);
        let d = DemandMatrix::single(&net, "s", "t", 1.0).unwrap();
        let a = if optimum {
            social_optimum(&net, &d, AssignmentParams::default()).unwrap()
        } else {
            frank_wolfe_equilibrium(&net, &d, AssignmentParams::default()).unwrap()
        };
        generate_traces("pigou", &net, &d, &a, params).unwrap()
    }

    #[test]
    fn noiseless_single_path_durations_equal_latency() {
        let inst = Builtin::PigouLinear.instance(0);
        let a = frank_wolfe_equilibrium(&inst.net, &inst.demands, AssignmentParams::default()).unwrap();
        let set = generate_traces("p", &inst.net, &inst.demands, &a, &TraceParams::default()).unwrap();
        assert_eq!(set.dataset.trips.len(), 100);
        for t in &set.dataset.trips {
            assert!(validate_trip(t).is_valid(), "{}", validate_trip(t));
            assert_eq!(t.duration(), 1800.0);
        }
    }

    #[test]
    fn pigou_linear_optimum_splits_latencies() {
        let params = TraceParams {
            n_agents: 10,
            ..TraceParams::default()
        };
        let set = pigou_traces(1, true, &params);
        let mut durations: Vec<f64> = set.dataset.trips.iter().map(|t| t.duration()).collect();
        durations.sort_by(f64::total_cmp);
        // Half the agents on each link: latency 1/2 on the variable link,
        // 1 on the constant one.
        assert_eq!(&durations[..5], &[1.0; 5]);
        assert_eq!(&durations[5..], &[1.0; 5]);
        let lat: Vec<f64> = set.truth.trips.iter().map(|t| t.path_latency_s).collect();
        assert_eq!(lat.iter().filter(|&&l| l == 0.5).count(), 5);
        assert_eq!(lat.iter().filter(|&&l| l == 1.0).count(), 5);
    }

    #[test]
    fn scaled_optimum_keeps_half_second_resolution() {
        let net = builtin::pigou(1, 1800.0);
        let d = DemandMatrix::single(&net, "s", "t", 1.0).unwrap();
        let a = social_optimum(&net, &d, AssignmentParams::default()).unwrap();
        let set = generate_traces("p", &net, &d, &a, &TraceParams { n_agents: 4, ..Default::default() }).unwrap();
        let mut durations: Vec<f64> = set.dataset.trips.iter().map(|t| t.duration()).collect();
        durations.sort_by(f64::total_cmp);
        assert_eq!(durations, vec![900.0, 900.0, 1800.0, 1800.0]);
    }

    #[test]
    fn noise_is_truncated_and_reproducible() {
        let params = TraceParams {
            n_agents: 300,
            sigma_s: 30.0,
            days: 3,
            seed: 42,
            ..TraceParams::default()
        };
        let inst = Builtin::PigouQuartic.instance(0);
        let a = frank_wolfe_equilibrium(&inst.net, &inst.demands, AssignmentParams::default()).unwrap();
        let set = generate_traces("q", &inst.net, &inst.demands, &a, &params).unwrap();
        assert_eq!(set.dataset.trips.len(), 900);
        for t in &set.dataset.trips {
            assert!((t.duration() - 1800.0).abs() <= 90.0 + DURATION_QUANTUM_S);
            assert!(validate_trip(t).is_valid());
        }
        let again = generate_traces("q", &inst.net, &inst.demands, &a, &params).unwrap();
        assert_eq!(set, again);
        // same home every day
        assert_eq!(set.dataset.trips[0].origin(), set.dataset.trips[1].origin());
        assert_ne!(set.dataset.trips[0].duration(), set.dataset.trips[1].duration());
    }

    #[test]
    fn too_few_agents_is_an_error() {
        let inst = builtin::random_grid(1);
        let a = frank_wolfe_equilibrium(&inst.net, &inst.demands, AssignmentParams::default()).unwrap();
        let params = TraceParams {
            n_agents: 3,
            ..TraceParams::default()
        };
        assert!(matches!(
            generate_traces("g", &inst.net, &inst.demands, &a, &params),
            Err(SimError::InsufficientAgents { n_agents: 3, commodities: 6 })
        ));
    }

    #[test]
    fn ground_truth_soc_uses_clamped_free_flow() {
        let set = pigou_traces(1, false, &TraceParams { n_agents: 10, ..Default::default() });
        // free-flow of the variable link is 0, clamped to 1 s; latency 1 s
        assert!(set.truth.trips.iter().all(|t| t.freeflow_s == 1.0));
        assert_eq!(set.truth.soc, 1.0);
    }
}
