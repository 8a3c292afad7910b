//! Day-to-day consistency: do commuters keep their mode, keep their route,
//! and does the fastest member of a stable group stay the fastest?

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{Cluster, ClusterKey};
use crate::geometry::{self, ContourParams};
use crate::model::{effective_mode, Mode, ModeClass, TripRecord};

/// One student's trips on distinct days, earliest trip of each day.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudentHistory {
    pub student_id: String,
    pub trips: Vec<TripRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Histories {
    pub histories: Vec<StudentHistory>,
    /// Students seen on a single day only.
    pub single_day_students: usize,
}

/// Groups trips by student, keeps the earliest trip per day (the morning
/// trip), and drops students observed on fewer than two days.
pub fn build_histories(trips: &[TripRecord]) -> Histories {
    let mut by_student: BTreeMap<&str, BTreeMap<&str, &TripRecord>> = BTreeMap::new();
    for t in trips {
        let days = by_student.entry(&t.student_id).or_default();
        let keep = match days.get(t.day.as_str()) {
            Some(prev) => (t.points[0].t, &t.trip_id) < (prev.points[0].t, &prev.trip_id),
            None => true,
        };
        if keep {
            days.insert(&t.day, t);
        }
    }
    let mut out = Histories::default();
    for (student, days) in by_student {
        if days.len() < 2 {
            out.single_day_students += 1;
            continue;
        }
        out.histories.push(StudentHistory {
            student_id: student.to_string(),
            trips: days.into_values().cloned().collect(),
        });
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ModeConsistencyStats {
    pub students: usize,
    /// Students with the same principal mode (metro/bus/car) on every trip.
    pub consistent_three_way: usize,
    /// Students staying within public or within private transport.
    pub consistent_grouped: usize,
    pub fraction_three_way: Option<f64>,
    pub fraction_grouped: Option<f64>,
    pub consistent_by_mode: BTreeMap<Mode, usize>,
    pub consistent_by_class: BTreeMap<ModeClass, usize>,
}

pub fn mode_consistency(histories: &[StudentHistory]) -> ModeConsistencyStats {
    let mut s = ModeConsistencyStats {
        students: histories.len(),
        ..Default::default()
    };
    for h in histories {
        let modes: BTreeSet<Mode> = h.trips.iter().map(effective_mode).collect();
        let classes: BTreeSet<ModeClass> = modes.iter().map(|m| m.class()).collect();
        if modes.len() == 1 {
            s.consistent_three_way += 1;
            *s.consistent_by_mode.entry(*modes.first().unwrap()).or_default() += 1;
        }
        if classes.len() == 1 {
            s.consistent_grouped += 1;
            *s.consistent_by_class.entry(*classes.first().unwrap()).or_default() += 1;
        }
    }
    let n = s.students as f64;
    s.fraction_three_way = (s.students > 0).then(|| s.consistent_three_way as f64 / n);
    s.fraction_grouped = (s.students > 0).then(|| s.consistent_grouped as f64 / n);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudentRouteResult {
    pub student_id: String,
    pub trips: usize,
    pub pairs: usize,
    pub consistent_pairs: usize,
    /// `None` when the student could not be evaluated.
    pub consistent: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RouteConsistencyReport {
    /// Same-mode students whose trips were compared.
    pub evaluated: usize,
    pub consistent: usize,
    pub rate: Option<f64>,
    pub excluded_mode_changes: usize,
    pub excluded_too_few_trips: usize,
    /// Students dropped because a pair of trips failed the geometry checks
    /// (endpoints apart, projection domain).
    pub excluded_geometry: usize,
    pub students: Vec<StudentRouteResult>,
}

/// Among students with one principal mode on every trip, the share whose
/// trips are pairwise route-consistent.
pub fn route_consistency_rate(
    histories: &[StudentHistory],
    params: ContourParams,
) -> RouteConsistencyReport {
    let results: Vec<Option<StudentRouteResult>> = histories
        .par_iter()
        .map(|h| {
            let modes: BTreeSet<Mode> = h.trips.iter().map(effective_mode).collect();
            if modes.len() != 1 {
                return None;
            }
            let routes: Vec<_> = h.trips.iter().map(|t| t.route()).collect();
            let mut r = StudentRouteResult {
                student_id: h.student_id.clone(),
                trips: routes.len(),
                pairs: 0,
                consistent_pairs: 0,
                consistent: None,
                error: None,
            };
            if routes.len() < 2 {
                r.error = Some("fewer than two trips".into());
                return Some(r);
            }
            for i in 0..routes.len() {
                for j in (i + 1)..routes.len() {
                    match geometry::routes_consistent(&routes[i], &routes[j], params) {
                        Ok(ok) => {
                            r.pairs += 1;
                            r.consistent_pairs += usize::from(ok);
                        }
                        Err(e) => {
                            r.error = Some(format!(
                                "{} vs {}: {e}",
                                h.trips[i].trip_id, h.trips[j].trip_id
                            ));
                            return Some(r);
                        }
                    }
                }
            }
            r.consistent = Some(r.consistent_pairs == r.pairs);
            Some(r)
        })
        .collect();
    let mut out = RouteConsistencyReport::default();
    out.excluded_mode_changes = results.iter().filter(|r| r.is_none()).count();
    for r in results.into_iter().flatten() {
        match r.consistent {
            Some(ok) => {
                out.evaluated += 1;
                out.consistent += usize::from(ok);
            }
            None if r.trips < 2 => out.excluded_too_few_trips += 1,
            None => out.excluded_geometry += 1,
        }
        out.students.push(r);
    }
    out.rate = (out.evaluated > 0).then(|| out.consistent as f64 / out.evaluated as f64);
    out
}

/// Clusters with the same key and the same member students, seen on two or
/// more days.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistentGroup {
    pub key: ClusterKey,
    pub members: Vec<String>,
    pub days: Vec<Cluster>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConsistentClusterSet {
    /// Distinct (key, member set) combinations considered.
    pub candidates: usize,
    pub groups: Vec<ConsistentGroup>,
}

pub fn consistent_clusters(clusters_by_day: &[Cluster]) -> ConsistentClusterSet {
    let mut groups: BTreeMap<(ClusterKey, Vec<String>), BTreeMap<String, Cluster>> = BTreeMap::new();
    for c in clusters_by_day {
        let members: BTreeSet<String> = c.trips.iter().map(|t| t.student_id.clone()).collect();
        groups
            .entry((c.key.clone(), members.into_iter().collect()))
            .or_default()
            .entry(c.day.clone())
            .or_insert_with(|| c.clone());
    }
    let candidates = groups.len();
    let groups = groups
        .into_iter()
        .filter(|(_, days)| days.len() >= 2)
        .map(|((key, members), days)| ConsistentGroup {
            key,
            members,
            days: days.into_values().collect(),
        })
        .collect();
    ConsistentClusterSet { candidates, groups }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPersistence {
    pub key: ClusterKey,
    pub members: Vec<String>,
    pub fastest_by_day: BTreeMap<String, Vec<String>>,
    pub persists: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PersistenceReport {
    pub groups: usize,
    pub persisting: usize,
    pub fraction: Option<f64>,
    pub details: Vec<GroupPersistence>,
}

/// Share of consistent groups whose fastest student (as a set, to handle
/// ties) is the same on every day.
pub fn fastest_persistence(set: &ConsistentClusterSet) -> PersistenceReport {
    let details: Vec<GroupPersistence> = set
        .groups
        .par_iter()
        .map(|g| {
            let fastest_by_day: BTreeMap<String, Vec<String>> = g
                .days
                .iter()
                .map(|c| {
                    let best = c.trips.iter().map(|t| t.duration()).fold(f64::INFINITY, f64::min);
                    let argmin: BTreeSet<String> = c
                        .trips
                        .iter()
                        .filter(|t| t.duration() == best)
                        .map(|t| t.student_id.clone())
                        .collect();
                    (c.day.clone(), argmin.into_iter().collect())
                })
                .collect();
            let mut sets = fastest_by_day.values();
            let first = sets.next();
            let persists = sets.all(|s| Some(s) == first);
            GroupPersistence {
                key: g.key.clone(),
                members: g.members.clone(),
                fastest_by_day,
                persists,
            }
        })
        .collect();
    let persisting = details.iter().filter(|d| d.persists).count();
    PersistenceReport {
        groups: details.len(),
        persisting,
        fraction: (!details.is_empty()).then(|| persisting as f64 / details.len() as f64),
        details,
    }
}
