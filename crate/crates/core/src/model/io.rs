//! `trips.jsonl` / `schools.csv` ingestion and emission.
//!
//! A trips file holds one JSON object per line:
//!
//! ```text
//! {"trip_id":"t1","student_id":"s1","day":"2016-11-14","school_id":"k1",
//!  "mode":"bus","points":[[1479081600,1.35,103.8],[1479082800,1.36,103.8]],
//!  "per_mode_distance_m":{"bus":1200.0}}
//! ```
//!
//! An optional first line `{"header":{"utc_offset_s":28800}}` declares the
//! local-time offset used to derive departure seconds-of-day. Lines that fail
//! to parse or validate are written, with a `reason`, to
//! `<input>.rejects.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{validate_trip, Dataset, GeoPoint, Mode, TripPoint, TripRecord, SECONDS_PER_DAY};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("empty dataset")]
    EmptyDataset,
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Optional first line of a trips file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TripsHeader {
    #[serde(default)]
    pub utc_offset_s: i64,
}

#[derive(Debug, Deserialize)]
struct HeaderLine {
    header: TripsHeader,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTrip {
    trip_id: String,
    student_id: String,
    day: String,
    school_id: String,
    mode: String,
    points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_mode_distance_m: Option<BTreeMap<String, f64>>,
}

/// A line that did not make it into the dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub lines: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rejects_path: Option<PathBuf>,
    pub utc_offset_s: i64,
}

/// Parsed trips plus everything that was turned away.
#[derive(Debug, Clone, Default)]
pub struct TripsFile {
    pub header: TripsHeader,
    pub trips: Vec<TripRecord>,
    pub rejects: Vec<Reject>,
    pub lines: usize,
}

pub fn rejects_path(input: &Path) -> PathBuf {
    let mut name = input.as_os_str().to_owned();
    name.push(".rejects.jsonl");
    PathBuf::from(name)
}

fn parse_trip(raw: RawTrip, utc_offset_s: i64) -> Result<TripRecord, String> {
    let mode = Mode::parse(&raw.mode).ok_or_else(|| format!("unknown mode `{}`", raw.mode))?;
    let points = raw
        .points
        .iter()
        .map(|[t, lat, lon]| TripPoint {
            t: *t,
            loc: GeoPoint { lat: *lat, lon: *lon },
        })
        .collect::<Vec<_>>();
    let per_mode_distance = match raw.per_mode_distance_m {
        None => None,
        Some(m) => {
            let mut out = BTreeMap::new();
            for (k, v) in m {
                let mode = Mode::parse(&k)
                    .ok_or_else(|| format!("unknown mode `{k}` in per_mode_distance_m"))?;
                out.insert(mode, v);
            }
            Some(out)
        }
    };
    let depart_time = points
        .first()
        .map(|p| (p.t + utc_offset_s as f64).rem_euclid(SECONDS_PER_DAY))
        .unwrap_or(0.0);
    let trip = TripRecord {
        trip_id: raw.trip_id,
        student_id: raw.student_id,
        day: raw.day,
        school_id: raw.school_id,
        mode,
        points,
        depart_time,
        per_mode_distance,
    };
    let report = validate_trip(&trip);
    if report.is_valid() {
        Ok(trip)
    } else {
        Err(report.to_string())
    }
}

/// Reads a trips file. `utc_offset_override` wins over the header line.
/// Duplicate trip ids after the first occurrence are rejected.
pub fn read_trips_jsonl(
    path: &Path,
    utc_offset_override: Option<i64>,
) -> Result<TripsFile, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = TripsFile::default();
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        out.lines += 1;
        if line_no == 1 {
            if let Ok(h) = serde_json::from_str::<HeaderLine>(&line) {
                out.header = h.header;
                out.lines -= 1;
                continue;
            }
        }
        let offset = utc_offset_override.unwrap_or(out.header.utc_offset_s);
        let parsed = serde_json::from_str::<RawTrip>(&line)
            .map_err(|e| format!("malformed line: {e}"))
            .and_then(|raw| parse_trip(raw, offset))
            .and_then(|trip| {
                if seen.insert(trip.trip_id.clone()) {
                    Ok(trip)
                } else {
                    Err(format!("duplicate trip_id {}", trip.trip_id))
                }
            });
        match parsed {
            Ok(trip) => out.trips.push(trip),
            Err(reason) => out.rejects.push(Reject {
                line: line_no,
                reason,
                raw: line,
            }),
        }
    }
    if let Some(o) = utc_offset_override {
        out.header.utc_offset_s = o;
    }
    Ok(out)
}

pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rejects {
        let raw: Value = serde_json::from_str(&r.raw).unwrap_or(Value::String(r.raw.clone()));
        let obj = serde_json::json!({ "line": r.line, "reason": r.reason, "raw": raw });
        writeln!(w, "{obj}").map_err(|e| IngestError::io(path, e))?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

pub fn write_trips_jsonl(
    path: &Path,
    trips: &[TripRecord],
    header: Option<TripsHeader>,
) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| IngestError::io(path, e);
    if let Some(h) = header {
        writeln!(w, "{}", serde_json::json!({ "header": h })).map_err(io)?;
    }
    for t in trips {
        let raw = RawTrip {
            trip_id: t.trip_id.clone(),
            student_id: t.student_id.clone(),
            day: t.day.clone(),
            school_id: t.school_id.clone(),
            mode: t.mode.as_str().to_string(),
            points: t.points.iter().map(|p| [p.t, p.loc.lat, p.loc.lon]).collect(),
            per_mode_distance_m: t.per_mode_distance.as_ref().map(|m| {
                m.iter()
                    .map(|(k, v)| (k.as_str().to_string(), *v))
                    .collect()
            }),
        };
        let line = serde_json::to_string(&raw).expect("trip serializes");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Serialize, Deserialize)]
struct SchoolRow {
    school_id: String,
    lat: f64,
    lon: f64,
}

pub fn read_schools_csv(path: &Path) -> Result<BTreeMap<String, GeoPoint>, IngestError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| IngestError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| IngestError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["school_id", "lat", "lon"] {
        return Err(IngestError::Format {
            path: path.to_path_buf(),
            message: "expected header `school_id,lat,lon`".into(),
        });
    }
    let mut schools = BTreeMap::new();
    for (i, row) in reader.deserialize::<SchoolRow>().enumerate() {
        let row = row.map_err(|e| IngestError::Format {
            path: path.to_path_buf(),
            message: format!("row {}: {e}", i + 2),
        })?;
        let loc = GeoPoint::new(row.lat, row.lon).map_err(|e| IngestError::Format {
            path: path.to_path_buf(),
            message: format!("row {}: {e}", i + 2),
        })?;
        if schools.insert(row.school_id.clone(), loc).is_some() {
            return Err(IngestError::Format {
                path: path.to_path_buf(),
                message: format!("duplicate school_id {}", row.school_id),
            });
        }
    }
    Ok(schools)
}

pub fn write_schools_csv(
    path: &Path,
    schools: &BTreeMap<String, GeoPoint>,
) -> Result<(), IngestError> {
    let fmt_err = |e: csv::Error| IngestError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(fmt_err)?;
    for (id, p) in schools {
        w.serialize(SchoolRow {
            school_id: id.clone(),
            lat: p.lat,
            lon: p.lon,
        })
        .map_err(fmt_err)?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}

/// Loads trips and schools, writes the rejects file, and drops (as rejects)
/// trips whose school does not resolve.
pub fn load_dataset(
    trips_path: &Path,
    schools_path: &Path,
    utc_offset_override: Option<i64>,
) -> Result<(Dataset, IngestReport), IngestError> {
    let schools = read_schools_csv(schools_path)?;
    let mut file = read_trips_jsonl(trips_path, utc_offset_override)?;
    let mut trips = Vec::with_capacity(file.trips.len());
    for t in std::mem::take(&mut file.trips) {
        if schools.contains_key(&t.school_id) {
            trips.push(t);
        } else {
            file.rejects.push(Reject {
                line: 0,
                reason: format!("unknown school_id {}", t.school_id),
                raw: t.trip_id.clone(),
            });
        }
    }
    let rpath = rejects_path(trips_path);
    write_rejects(&rpath, &file.rejects)?;
    let report = IngestReport {
        lines: file.lines,
        accepted: trips.len(),
        rejected: file.rejects.len(),
        rejects_path: Some(rpath),
        utc_offset_s: file.header.utc_offset_s,
    };
    if trips.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    Ok((Dataset { trips, schools }, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"trip_id":"t1","student_id":"s1","day":"2016-11-14","school_id":"k1","mode":"bus","points":[[1479081600,1.35,103.8],[1479082800,1.36,103.8]]}"#;

    #[test]
    fn header_offset_sets_depart_time() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trips.jsonl");
        std::fs::write(&p, format!("{{\"header\":{{\"utc_offset_s\":28800}}}}\n{GOOD}\n")).unwrap();
        let f = read_trips_jsonl(&p, None).unwrap();
        assert_eq!(f.trips.len(), 1);
        // 1479081600 is 00:00 UTC, 08:00 in UTC+8
        assert_eq!(f.trips[0].depart_time, 8.0 * 3600.0);
        let f = read_trips_jsonl(&p, Some(0)).unwrap();
        assert_eq!(f.trips[0].depart_time, 0.0);
    }

    #[test]
    fn bad_lines_become_rejects_with_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let trips = dir.path().join("trips.jsonl");
        let schools = dir.path().join("schools.csv");
        let bad_mode = GOOD.replace("\"bus\"", "\"tram\"").replace("t1", "t2");
        let backwards = GOOD
            .replace("1479082800", "1479080000")
            .replace("\"t1\"", "\"t3\"");
        let unknown_school = GOOD.replace("k1", "k9").replace("\"t1\"", "\"t4\"");
        std::fs::write(
            &trips,
            format!("{GOOD}\nnot json\n{bad_mode}\n{backwards}\n{GOOD}\n{unknown_school}\n"),
        )
        .unwrap();
        std::fs::write(&schools, "school_id,lat,lon\nk1,1.36,103.8\n").unwrap();
        let (ds, report) = load_dataset(&trips, &schools, None).unwrap();
        assert_eq!(ds.trips.len(), 1);
        assert_eq!(report.rejected, 5);
        let text = std::fs::read_to_string(rejects_path(&trips)).unwrap();
        let reasons: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<Value>(l).unwrap()["reason"].as_str().unwrap().to_string())
            .collect();
        assert!(reasons[0].starts_with("malformed line"));
        assert!(reasons[1].contains("unknown mode"));
        assert!(reasons[2].contains("timestamps"));
        assert!(reasons[3].contains("duplicate trip_id"));
        assert!(reasons[4].contains("unknown school_id"));
    }

    #[test]
    fn schools_header_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("schools.csv");
        std::fs::write(&p, "id,lat,lon\nk1,1.0,103.0\n").unwrap();
        assert!(matches!(read_schools_csv(&p), Err(IngestError::Format { .. })));
    }

    #[test]
    fn write_then_read_keeps_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trips.jsonl");
        let mut t = crate::model::fixtures::trip("a", 754.25);
        t.per_mode_distance = Some(BTreeMap::from([(Mode::Bus, 900.0), (Mode::Metro, 10.5)]));
        write_trips_jsonl(&p, &[t.clone()], Some(TripsHeader { utc_offset_s: 25_200 })).unwrap();
        let back = read_trips_jsonl(&p, None).unwrap();
        assert!(back.rejects.is_empty());
        assert_eq!(back.trips, vec![t]);
    }

    #[test]
    fn empty_trips_file_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let trips = dir.path().join("trips.jsonl");
        let schools = dir.path().join("schools.csv");
        std::fs::write(&trips, "").unwrap();
        std::fs::write(&schools, "school_id,lat,lon\n").unwrap();
        assert!(matches!(
            load_dataset(&trips, &schools, None),
            Err(IngestError::EmptyDataset)
        ));
    }
}
