//! Imitation regret: each trip's duration minus the fastest duration in its
//! cluster, its distribution, and the (ε, δ) summary.

use serde::Serialize;
use thiserror::Error;

use crate::clustering::{Cluster, ClusterKey, MixedCluster};
use crate::model::effective_mode;
use crate::stats;

pub const SUMMARY_DELTAS: [f64; 3] = [0.01, 0.05, 0.1];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegretError {
    #[error("no nonzero regrets")]
    NoNonzeroRegrets,
    #[error("delta must be in (0, 1), got {0}")]
    InvalidDelta(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRow {
    pub trip_id: String,
    pub student_id: String,
    pub day: String,
    pub key: ClusterKey,
    /// Trip duration, seconds.
    pub t_i: f64,
    /// Fastest duration in the cluster, seconds.
    pub t_b: f64,
    pub regret: f64,
    pub is_baseline: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RegretTable {
    pub rows: Vec<RegretRow>,
}

impl RegretTable {
    /// Regret values of the analysed population: every row, or only the
    /// non-baseline rows.
    pub fn population(&self, include_baselines: bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| include_baselines || !r.is_baseline)
            .map(|r| r.regret)
            .collect()
    }
}

/// Regret of every member against its cluster's fastest trip. Rows follow
/// the cluster order, then member order.
pub fn imitation_regret(clusters: &[Cluster]) -> RegretTable {
    let mut rows = Vec::new();
    for c in clusters {
        let t_b = c
            .trips
            .iter()
            .map(|t| t.duration())
            .fold(f64::INFINITY, f64::min);
        for t in &c.trips {
            let t_i = t.duration();
            rows.push(RegretRow {
                trip_id: t.trip_id.clone(),
                student_id: t.student_id.clone(),
                day: c.day.clone(),
                key: c.key.clone(),
                t_i,
                t_b,
                regret: t_i - t_b,
                is_baseline: t_i == t_b,
            });
        }
    }
    RegretTable { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ccdf {
    /// `(x, F̄(x))` at every distinct regret value, starting at `(0, 1)`.
    pub points: Vec<(f64, f64)>,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

impl Ccdf {
    /// `F̄(x)`: fraction of the population with regret `>= x`.
    pub fn at(&self, x: f64) -> f64 {
        match self.points.iter().rposition(|&(px, _)| px <= x) {
            Some(i) if self.points[i].0 == x => self.points[i].1,
            Some(i) => self.points.get(i + 1).map_or(0.0, |p| p.1),
            None => 1.0,
        }
    }
}

/// Complementary CDF of regret. Baseline rows are left out unless
/// `include_baselines` is set.
pub fn regret_ccdf(table: &RegretTable, include_baselines: bool) -> Result<Ccdf, RegretError> {
    let mut values = table.population(include_baselines);
    if values.is_empty() {
        return Err(RegretError::NoNonzeroRegrets);
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let mut points = Vec::new();
    if values[0] > 0.0 {
        points.push((0.0, 1.0));
    }
    let mut i = 0;
    while i < n {
        let x = values[i];
        points.push((x, (n - i) as f64 / n as f64));
        while i < n && values[i] == x {
            i += 1;
        }
    }
    Ok(Ccdf {
        points,
        n,
        mean: stats::mean(&values).expect("non-empty"),
        median: stats::median(&values).expect("non-empty"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonDelta {
    pub epsilon: f64,
    pub delta: f64,
}

/// Smallest ε such that at least `1 − δ` of the population has regret
/// `<= ε` (nearest rank).
pub fn epsilon_for_delta(
    table: &RegretTable,
    delta: f64,
    include_baselines: bool,
) -> Result<EpsilonDelta, RegretError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(RegretError::InvalidDelta(delta));
    }
    let mut values = table.population(include_baselines);
    if values.is_empty() {
        return Err(RegretError::NoNonzeroRegrets);
    }
    values.sort_by(f64::total_cmp);
    Ok(EpsilonDelta {
        epsilon: stats::percentile_sorted(&values, (1.0 - delta) * 100.0),
        delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretSummary {
    pub rows: usize,
    pub baseline_rows: usize,
    pub clusters: usize,
    /// `"nonzero"` when baselines are excluded, `"all"` otherwise. Falls
    /// back to `"all"` when every regret is zero.
    pub population: &'static str,
    pub population_size: usize,
    pub mean_s: f64,
    pub median_s: f64,
    pub max_s: f64,
    pub epsilon: Vec<EpsilonDelta>,
}

/// Mean, median and ε at the standard δ values. When every row is a
/// baseline, the summary is taken over all rows (all zero) rather than
/// failing.
pub fn summarize(
    table: &RegretTable,
    clusters: usize,
    include_baselines: bool,
) -> Result<RegretSummary, RegretError> {
    if table.rows.is_empty() {
        return Err(RegretError::NoNonzeroRegrets);
    }
    let include = include_baselines || table.rows.iter().all(|r| r.is_baseline);
    let ccdf = regret_ccdf(table, include)?;
    let epsilon = SUMMARY_DELTAS
        .iter()
        .map(|&d| epsilon_for_delta(table, d, include))
        .collect::<Result<Vec<_>, _>>()?;
    let pop = table.population(include);
    Ok(RegretSummary {
        rows: table.rows.len(),
        baseline_rows: table.rows.iter().filter(|r| r.is_baseline).count(),
        clusters,
        population: if include { "all" } else { "nonzero" },
        population_size: pop.len(),
        mean_s: ccdf.mean,
        median_s: ccdf.median,
        max_s: pop.iter().copied().fold(0.0, f64::max),
        epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Fastest {
    Private,
    Public,
    Tied,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedClusterResult {
    pub day: String,
    pub fastest: Fastest,
    pub fastest_trip: String,
    pub fastest_private_s: f64,
    pub fastest_public_s: f64,
    /// Transit members' regret against the fastest private user; only
    /// filled when a private user is strictly fastest.
    pub cross_regrets: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MixedRegretStats {
    pub clusters: usize,
    pub fastest_private: usize,
    pub fastest_public: usize,
    pub tied: usize,
    pub fraction_fastest_private: Option<f64>,
    pub cross_regret_rows: usize,
    pub mean_cross_regret_s: Option<f64>,
    /// Mean duration of the transit users in the cross-regret population.
    pub mean_transit_duration_s: Option<f64>,
    pub details: Vec<MixedClusterResult>,
}

/// Compares transit users with the fastest private user in clusters that
/// mix both. Only clusters where a private user is strictly fastest feed
/// the cross regret; ties are counted separately.
pub fn cross_mode_regret(clusters: &[MixedCluster]) -> MixedRegretStats {
    let mut out = MixedRegretStats {
        clusters: clusters.len(),
        ..Default::default()
    };
    let mut regrets = Vec::new();
    let mut transit = Vec::new();
    for c in clusters {
        let fastest_of = |public: bool| {
            c.trips
                .iter()
                .filter(|t| effective_mode(t).is_public() == public)
                .min_by(|a, b| a.duration().total_cmp(&b.duration()).then(a.trip_id.cmp(&b.trip_id)))
        };
        let (Some(private), Some(public)) = (fastest_of(false), fastest_of(true)) else {
            continue;
        };
        let (tp, tq) = (private.duration(), public.duration());
        let (fastest, trip) = if tp < tq {
            (Fastest::Private, private)
        } else if tq < tp {
            (Fastest::Public, public)
        } else {
            (
                Fastest::Tied,
                if private.trip_id <= public.trip_id { private } else { public },
            )
        };
        let mut cross = Vec::new();
        match fastest {
            Fastest::Private => {
                out.fastest_private += 1;
                for t in c.trips.iter().filter(|t| effective_mode(t).is_public()) {
                    cross.push(t.duration() - tp);
                    transit.push(t.duration());
                }
                regrets.extend_from_slice(&cross);
            }
            Fastest::Public => out.fastest_public += 1,
            Fastest::Tied => out.tied += 1,
        }
        out.details.push(MixedClusterResult {
            day: c.day.clone(),
            fastest,
            fastest_trip: trip.trip_id.clone(),
            fastest_private_s: tp,
            fastest_public_s: tq,
            cross_regrets: cross,
        });
    }
    let n = out.details.len();
    out.clusters = n;
    out.fraction_fastest_private = (n > 0).then(|| out.fastest_private as f64 / n as f64);
    out.cross_regret_rows = regrets.len();
    out.mean_cross_regret_s = stats::mean(&regrets);
    out.mean_transit_duration_s = stats::mean(&transit);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::SpatialClusterId;
    use crate::model::fixtures::trip;
    use crate::model::{Mode, ModeClass, TripRecord};
    use proptest::prelude::*;

    fn cluster(durations_min: &[f64]) -> Cluster {
        Cluster {
            day: "2016-11-14".into(),
            key: ClusterKey {
                l: SpatialClusterId(0),
                t: 24,
                s: "sch".into(),
                m: ModeClass::Public,
            },
            trips: durations_min
                .iter()
                .enumerate()
                .map(|(i, d)| trip(&format!("t{i}"), d * 60.0))
                .collect(),
        }
    }

    fn table_of(regrets: &[f64]) -> RegretTable {
        RegretTable {
            rows: regrets
                .iter()
                .enumerate()
                .map(|(i, &r)| RegretRow {
                    trip_id: format!("t{i}"),
                    student_id: format!("s{i}"),
                    day: "d".into(),
                    key: cluster(&[]).key,
                    t_i: r,
                    t_b: 0.0,
                    regret: r,
                    is_baseline: r == 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn regrets_subtract_the_cluster_minimum() {
        let t = imitation_regret(&[cluster(&[20.0, 25.0, 31.0])]);
        let r: Vec<f64> = t.rows.iter().map(|r| r.regret / 60.0).collect();
        assert_eq!(r, vec![0.0, 5.0, 11.0]);
        assert_eq!(t.rows.iter().filter(|r| r.is_baseline).count(), 1);
        let tie = imitation_regret(&[cluster(&[17.0, 17.0])]);
        assert!(tie.rows.iter().all(|r| r.regret == 0.0 && r.is_baseline));
        assert!(imitation_regret(&[]).rows.is_empty());
    }

    #[test]
    fn two_point_ccdf() {
        let c = regret_ccdf(&table_of(&[0.0, 5.0, 11.0]), false).unwrap();
        assert_eq!(c.at(5.0), 1.0);
        assert_eq!(c.at(11.0), 0.5);
        assert_eq!(c.at(0.0), 1.0);
        assert_eq!(c.at(12.0), 0.0);
        assert_eq!(c.at(7.0), 0.5);
        assert_eq!((c.mean, c.median), (8.0, 8.0));
        assert_eq!(regret_ccdf(&table_of(&[0.0, 0.0]), false), Err(RegretError::NoNonzeroRegrets));
    }

    #[test]
    fn epsilon_nearest_rank() {
        let minutes: Vec<f64> = (1..=100).map(f64::from).collect();
        let e = epsilon_for_delta(&table_of(&minutes), 0.05, false).unwrap();
        assert_eq!(e.epsilon, 95.0);
        let flat = table_of(&[7.0; 9]);
        for d in [0.01, 0.3, 0.9] {
            assert_eq!(epsilon_for_delta(&flat, d, false).unwrap().epsilon, 7.0);
        }
        assert_eq!(epsilon_for_delta(&flat, 1.0, false), Err(RegretError::InvalidDelta(1.0)));
    }

    #[test]
    fn all_zero_summary_falls_back_to_all_rows() {
        let s = summarize(&table_of(&[0.0, 0.0, 0.0]), 1, false).unwrap();
        assert_eq!(s.population, "all");
        assert!(s.epsilon.iter().all(|e| e.epsilon == 0.0));
    }

    fn with_mode(mut t: TripRecord, mode: Mode) -> TripRecord {
        t.mode = mode;
        t
    }

    fn mixed(trips: Vec<TripRecord>) -> MixedCluster {
        MixedCluster {
            day: "d".into(),
            l: SpatialClusterId(0),
            t: 0,
            s: "sch".into(),
            trips,
        }
    }

    #[test]
    fn cross_mode_cases() {
        let fast_car = mixed(vec![
            with_mode(trip("a", 15.0 * 60.0), Mode::Car),
            with_mode(trip("b", 22.0 * 60.0), Mode::Bus),
        ]);
        let slow_car = mixed(vec![
            with_mode(trip("c", 30.0 * 60.0), Mode::Car),
            with_mode(trip("d", 22.0 * 60.0), Mode::Bus),
        ]);
        let tie = mixed(vec![
            with_mode(trip("e", 20.0 * 60.0), Mode::Car),
            with_mode(trip("f", 20.0 * 60.0), Mode::Metro),
        ]);
        let s = cross_mode_regret(&[fast_car, slow_car, tie]);
        assert_eq!((s.fastest_private, s.fastest_public, s.tied), (1, 1, 1));
        assert_eq!(s.mean_cross_regret_s, Some(7.0 * 60.0));
        assert_eq!(s.mean_transit_duration_s, Some(22.0 * 60.0));
        assert!((s.fraction_fastest_private.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let empty = cross_mode_regret(&[]);
        assert_eq!(empty.clusters, 0);
        assert_eq!(empty.fraction_fastest_private, None);
    }

    proptest! {
        #[test]
        fn regret_properties(
            d in prop::collection::vec(60.0f64..7200.0, 2..30),
            shift in -50.0f64..3600.0,
        ) {
            let c = cluster(&d.iter().map(|x| x / 60.0).collect::<Vec<_>>());
            let t = imitation_regret(std::slice::from_ref(&c));
            prop_assert!(t.rows.iter().all(|r| r.regret >= 0.0));
            prop_assert!(t.rows.iter().any(|r| r.is_baseline && r.regret == 0.0));
            // translation invariance (integer shift keeps the arithmetic exact)
            let shifted = Cluster {
                trips: c.trips.iter().map(|tr| {
                    let mut tr = tr.clone();
                    let last = tr.points.len() - 1;
                    tr.points[last].t += shift.round();
                    tr
                }).collect(),
                ..c.clone()
            };
            let ts = imitation_regret(&[shifted]);
            for (a, b) in t.rows.iter().zip(&ts.rows) {
                prop_assert!((a.regret - b.regret).abs() < 1e-6);
            }
        }

        #[test]
        fn epsilon_non_increasing_in_delta(
            r in prop::collection::vec(0.0f64..1000.0, 1..200),
            d1 in 0.001f64..0.999, d2 in 0.001f64..0.999,
        ) {
            let t = table_of(&r);
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let e_lo = epsilon_for_delta(&t, lo, true).unwrap().epsilon;
            let e_hi = epsilon_for_delta(&t, hi, true).unwrap().epsilon;
            prop_assert!(e_hi <= e_lo);
        }

        #[test]
        fn ccdf_is_non_increasing(r in prop::collection::vec(0.0f64..1000.0, 1..200)) {
            let t = table_of(&r);
            if let Ok(c) = regret_ccdf(&t, false) {
                prop_assert_eq!(c.points[0].1, 1.0);
                for w in c.points.windows(2) {
                    prop_assert!(w[1].1 <= w[0].1 && w[1].0 > w[0].0);
                }
            }
        }
    }
}
