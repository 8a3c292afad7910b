//! Trips, students and schools: the canonical data model, validation and the
//! percentile-trimming filter.

pub mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry;
use crate::stats;

/// Seconds in a day; `depart_time` lives in `[0, SECONDS_PER_DAY)`.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid percentile bounds: need 0 <= low ({low}) < high ({high}) <= 100")]
    InvalidPercentiles { low: f64, high: f64 },
    #[error("no mode distances for trip {0}")]
    NoModeDistances(String),
    #[error("invalid coordinate: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
}

/// A WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ModelError> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(ModelError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat, self.lon)
    }
}

/// One timestamped fix of a trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripPoint {
    /// UTC epoch seconds.
    pub t: f64,
    pub loc: GeoPoint,
}

/// Labelled transportation mode. The declaration order doubles as the
/// tie-break order for [`principal_mode`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Metro,
    Bus,
    Car,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Metro, Mode::Bus, Mode::Car];

    pub fn is_public(self) -> bool {
        matches!(self, Mode::Metro | Mode::Bus)
    }

    pub fn class(self) -> ModeClass {
        if self.is_public() {
            ModeClass::Public
        } else {
            ModeClass::Private
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Metro => "metro",
            Mode::Bus => "bus",
            Mode::Car => "car",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "metro" => Some(Mode::Metro),
            "bus" => Some(Mode::Bus),
            "car" => Some(Mode::Car),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Public (bus, metro) versus private (car, taxi) transportation.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ModeClass {
    Public,
    Private,
}

impl ModeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeClass::Public => "public",
            ModeClass::Private => "private",
        }
    }
}

impl fmt::Display for ModeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One commuter trip from home to school.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub trip_id: String,
    pub student_id: String,
    /// Calendar date, `YYYY-MM-DD`.
    pub day: String,
    pub school_id: String,
    pub mode: Mode,
    pub points: Vec<TripPoint>,
    /// Local seconds-of-day of the first fix.
    pub depart_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_mode_distance: Option<BTreeMap<Mode, f64>>,
}

impl TripRecord {
    pub fn origin(&self) -> GeoPoint {
        self.points[0].loc
    }

    pub fn destination(&self) -> GeoPoint {
        self.points[self.points.len() - 1].loc
    }

    /// Seconds between the first and the last fix.
    pub fn duration(&self) -> f64 {
        self.points[self.points.len() - 1].t - self.points[0].t
    }

    pub fn route(&self) -> Vec<GeoPoint> {
        self.points.iter().map(|p| p.loc).collect()
    }

    /// Travelled distance along the recorded fixes.
    pub fn path_length_m(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| geometry::geodesic_distance(w[0].loc, w[1].loc))
            .sum()
    }
}

/// A single broken invariant found by [`validate_trip`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }

    fn push(&mut self, field: &'static str, message: impl Into<String>) {
        self.violations.push(Violation {
            field,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

/// Checks every [`TripRecord`] invariant and lists the ones that fail.
pub fn validate_trip(trip: &TripRecord) -> ValidationReport {
    let mut report = ValidationReport::default();
    if trip.trip_id.is_empty() {
        report.push("trip_id", "empty id");
    }
    if trip.student_id.is_empty() {
        report.push("student_id", "empty id");
    }
    if trip.school_id.is_empty() {
        report.push("school_id", "empty id");
    }
    if chrono::NaiveDate::parse_from_str(&trip.day, "%Y-%m-%d").is_err() {
        report.push("day", format!("`{}` is not a YYYY-MM-DD date", trip.day));
    }
    if trip.points.len() < 2 {
        report.push(
            "points",
            format!("need at least 2 points, got {}", trip.points.len()),
        );
    }
    if let Some(bad) = trip.points.iter().find(|p| !p.loc.is_valid()) {
        report.push("coordinates", format!("invalid coordinate {}", bad.loc));
    }
    if trip.points.iter().any(|p| !p.t.is_finite()) {
        report.push("timestamps", "non-finite timestamp");
    } else if let Some(i) = trip.points.windows(2).position(|w| w[1].t <= w[0].t) {
        report.push(
            "timestamps",
            format!("not strictly increasing at index {}", i + 1),
        );
    }
    if trip.points.len() >= 2 {
        let d = trip.duration();
        if !(d > 0.0) {
            report.push("duration", format!("duration must be > 0, got {d}"));
        }
    }
    if !(trip.depart_time >= 0.0 && trip.depart_time < SECONDS_PER_DAY) {
        report.push(
            "depart_time",
            format!("{} is not a seconds-of-day value", trip.depart_time),
        );
    }
    if let Some(dist) = &trip.per_mode_distance {
        if dist.values().any(|d| !(d.is_finite() && *d >= 0.0)) {
            report.push("per_mode_distance", "distances must be finite and >= 0");
        }
    }
    report
}

/// Trips plus the school locations they resolve against.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trips: Vec<TripRecord>,
    pub schools: BTreeMap<String, GeoPoint>,
}

impl Dataset {
    /// Dataset-level invariants: unique trip ids and resolvable schools.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for t in &self.trips {
            if !seen.insert(t.trip_id.as_str()) {
                problems.push(format!("duplicate trip_id {}", t.trip_id));
            }
            if !self.schools.contains_key(&t.school_id) {
                problems.push(format!(
                    "trip {} references unknown school {}",
                    t.trip_id, t.school_id
                ));
            }
        }
        problems
    }
}

/// Which per-trip quantity the percentile filter looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimMetric {
    #[default]
    Duration,
    /// Duration first, then travelled distance, both against the input's
    /// percentiles.
    DurationAndDistance,
}

/// Keeps trips whose duration lies within the nearest-rank
/// `[P_low, P_high]` of the input durations, preserving order.
pub fn trim_percentiles(
    trips: &[TripRecord],
    low_pct: f64,
    high_pct: f64,
) -> Result<Vec<TripRecord>, ModelError> {
    trim_percentiles_by(trips, low_pct, high_pct, TrimMetric::Duration)
}

pub fn trim_percentiles_by(
    trips: &[TripRecord],
    low_pct: f64,
    high_pct: f64,
    metric: TrimMetric,
) -> Result<Vec<TripRecord>, ModelError> {
    if !(0.0 <= low_pct && low_pct < high_pct && high_pct <= 100.0) {
        return Err(ModelError::InvalidPercentiles {
            low: low_pct,
            high: high_pct,
        });
    }
    if trips.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let durations: Vec<f64> = trips.iter().map(TripRecord::duration).collect();
    let keep_duration = percentile_window(&durations, low_pct, high_pct);
    let keep_distance = match metric {
        TrimMetric::Duration => None,
        TrimMetric::DurationAndDistance => {
            let lengths: Vec<f64> = trips.iter().map(TripRecord::path_length_m).collect();
            Some((percentile_window(&lengths, low_pct, high_pct), lengths))
        }
    };
    Ok(trips
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let d = durations[*i];
            let ok = keep_duration.0 <= d && d <= keep_duration.1;
            ok && keep_distance
                .as_ref()
                .is_none_or(|((lo, hi), lengths)| *lo <= lengths[*i] && lengths[*i] <= *hi)
        })
        .map(|(_, t)| t.clone())
        .collect())
}

fn percentile_window(values: &[f64], low_pct: f64, high_pct: f64) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (
        stats::percentile_sorted(&sorted, low_pct),
        stats::percentile_sorted(&sorted, high_pct),
    )
}

/// The mode with the longest travelled distance. Ties resolve to the
/// earliest of Metro, Bus, Car.
pub fn principal_mode(trip: &TripRecord) -> Result<Mode, ModelError> {
    let dist = trip
        .per_mode_distance
        .as_ref()
        .filter(|d| !d.is_empty())
        .ok_or_else(|| ModelError::NoModeDistances(trip.trip_id.clone()))?;
    let mut best: Option<(Mode, f64)> = None;
    // BTreeMap iterates in Mode order, so a strict comparison keeps the
    // earliest mode on ties.
    for (&mode, &d) in dist {
        if best.is_none_or(|(_, bd)| d > bd) {
            best = Some((mode, d));
        }
    }
    Ok(best.expect("non-empty").0)
}

/// Principal mode when distances are available, the labelled mode otherwise.
pub fn effective_mode(trip: &TripRecord) -> Mode {
    principal_mode(trip).unwrap_or(trip.mode)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Minimal valid trip: straight north-bound fixes, one per minute.
    pub fn trip(id: &str, duration_s: f64) -> TripRecord {
        TripRecord {
            trip_id: id.to_string(),
            student_id: format!("s-{id}"),
            day: "2016-11-14".to_string(),
            school_id: "sch".to_string(),
            mode: Mode::Bus,
            points: vec![
                TripPoint {
                    t: 1_479_081_600.0,
                    loc: GeoPoint { lat: 1.35, lon: 103.8 },
                },
                TripPoint {
                    t: 1_479_081_600.0 + duration_s,
                    loc: GeoPoint { lat: 1.36, lon: 103.8 },
                },
            ],
            depart_time: 7.0 * 3600.0,
            per_mode_distance: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::trip;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_trip_is_valid() {
        assert!(validate_trip(&trip("a", 60.0)).is_valid());
    }

    #[test]
    fn non_monotone_timestamps_are_reported() {
        let mut t = trip("a", 600.0);
        t.points.insert(
            1,
            TripPoint {
                t: t.points[0].t - 5.0,
                loc: GeoPoint { lat: 1.355, lon: 103.8 },
            },
        );
        let report = validate_trip(&t);
        assert!(report.mentions("timestamps"), "{report}");
    }

    #[test]
    fn zero_duration_is_reported() {
        let mut t = trip("a", 600.0);
        t.points[1].t = t.points[0].t;
        let report = validate_trip(&t);
        assert!(report.mentions("duration"));
        assert!(report.mentions("timestamps"));
    }

    #[test]
    fn single_point_and_bad_coordinates_are_reported() {
        let mut t = trip("a", 600.0);
        t.points.truncate(1);
        assert!(validate_trip(&t).mentions("points"));
        let mut t = trip("b", 600.0);
        t.points[0].loc.lat = 91.0;
        assert!(validate_trip(&t).mentions("coordinates"));
        let mut t = trip("c", 600.0);
        t.per_mode_distance = Some(BTreeMap::from([(Mode::Bus, -1.0)]));
        assert!(validate_trip(&t).mentions("per_mode_distance"));
        let mut t = trip("d", 600.0);
        t.day = "14/11/2016".into();
        assert!(validate_trip(&t).mentions("day"));
    }

    #[test]
    fn trims_one_to_hundred_minutes_to_ninety_one() {
        let trips: Vec<_> = (1..=100)
            .map(|m| trip(&format!("t{m}"), m as f64 * 60.0))
            .collect();
        let kept = trim_percentiles(&trips, 5.0, 95.0).unwrap();
        assert_eq!(kept.len(), 91);
        assert_eq!(kept.first().unwrap().duration(), 5.0 * 60.0);
        assert_eq!(kept.last().unwrap().duration(), 95.0 * 60.0);
    }

    #[test]
    fn full_window_is_identity() {
        let trips: Vec<_> = [30.0, 10.0, 20.0, 10.0]
            .iter()
            .enumerate()
            .map(|(i, d)| trip(&format!("t{i}"), *d))
            .collect();
        assert_eq!(trim_percentiles(&trips, 0.0, 100.0).unwrap(), trips);
    }

    #[test]
    fn trim_rejects_empty_and_bad_bounds() {
        assert_eq!(
            trim_percentiles(&[], 5.0, 95.0),
            Err(ModelError::EmptyDataset)
        );
        assert!(matches!(
            trim_percentiles(&[trip("a", 1.0)], 50.0, 50.0),
            Err(ModelError::InvalidPercentiles { .. })
        ));
    }

    #[test]
    fn distance_trim_drops_long_detours() {
        let mut trips: Vec<_> = (1..=20)
            .map(|i| trip(&format!("t{i}"), 600.0 + i as f64))
            .collect();
        // same duration band, but a very long path
        trips[10].points[1].loc.lat = 1.60;
        let by_duration = trim_percentiles(&trips, 5.0, 95.0).unwrap();
        let by_both =
            trim_percentiles_by(&trips, 5.0, 95.0, TrimMetric::DurationAndDistance).unwrap();
        assert!(by_duration.iter().any(|t| t.trip_id == "t11"));
        assert!(by_both.iter().all(|t| t.trip_id != "t11"));
    }

    fn with_distances(d: &[(Mode, f64)]) -> TripRecord {
        let mut t = trip("a", 60.0);
        t.per_mode_distance = Some(d.iter().copied().collect());
        t
    }

    #[test]
    fn principal_mode_examples() {
        assert_eq!(
            principal_mode(&with_distances(&[(Mode::Metro, 5000.0), (Mode::Bus, 1000.0)])),
            Ok(Mode::Metro)
        );
        assert_eq!(
            principal_mode(&with_distances(&[(Mode::Bus, 2000.0), (Mode::Car, 2000.0)])),
            Ok(Mode::Bus)
        );
        assert_eq!(
            principal_mode(&with_distances(&[(Mode::Car, 1.0)])),
            Ok(Mode::Car)
        );
        assert_eq!(
            principal_mode(&trip("x", 60.0)),
            Err(ModelError::NoModeDistances("x".into()))
        );
    }

    proptest! {
        #[test]
        fn trimmed_output_is_a_subset_within_input_percentiles(
            durations in prop::collection::vec(1u32..5000, 1..200),
            low in 0.0f64..50.0,
            span in 1.0f64..50.0,
        ) {
            let high = (low + span).min(100.0);
            let trips: Vec<_> = durations
                .iter()
                .enumerate()
                .map(|(i, d)| trip(&format!("t{i}"), *d as f64))
                .collect();
            let kept = trim_percentiles(&trips, low, high).unwrap();
            let mut sorted: Vec<f64> = durations.iter().map(|d| *d as f64).collect();
            sorted.sort_by(f64::total_cmp);
            let lo = stats::percentile_sorted(&sorted, low);
            let hi = stats::percentile_sorted(&sorted, high);
            let mut it = trips.iter();
            for k in &kept {
                prop_assert!(it.any(|t| t == k), "order or membership broken");
                prop_assert!(lo <= k.duration() && k.duration() <= hi);
            }
        }

        #[test]
        fn principal_mode_is_scale_invariant(
            metro in 0.0f64..1e5, bus in 0.0f64..1e5, car in 0.0f64..1e5,
            scale in 1e-3f64..1e3,
        ) {
            let t = with_distances(&[(Mode::Metro, metro), (Mode::Bus, bus), (Mode::Car, car)]);
            let s = with_distances(&[
                (Mode::Metro, metro * scale), (Mode::Bus, bus * scale), (Mode::Car, car * scale),
            ]);
            prop_assert_eq!(principal_mode(&t), principal_mode(&s));
        }
    }
}
