//! CSV twins of the JSON reports.

use std::path::Path;

use serde::Serialize;

use super::{PipelineError, PipelineResult, Stage};
use crate::equilibration::{PersistenceReport, RouteConsistencyReport};
use crate::regret::{Ccdf, RegretTable};
use crate::soc::{FreeFlowEstimate, HistogramBin};

fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> PipelineResult<()> {
    let err = |e: csv::Error| PipelineError::internal(Stage::Report, format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush()
        .map_err(|e| PipelineError::internal(Stage::Report, format!("{}: {e}", path.display())))
}

pub fn ccdf_csv(path: &Path, ccdf: Option<&Ccdf>) -> PipelineResult<()> {
    let points = ccdf.map(|c| c.points.clone()).unwrap_or_default();
    write_rows(path, &["x_seconds", "ccdf"], points)
}

pub fn histogram_csv(path: &Path, bins: &[HistogramBin]) -> PipelineResult<()> {
    let rows = bins.iter().map(|b| {
        (
            b.bin_lo,
            b.bin_hi.map_or_else(|| "inf".to_string(), |h| h.to_string()),
            b.count,
        )
    });
    write_rows(path, &["bin_lo", "bin_hi", "count"], rows)
}

pub(crate) fn regret_table_csv(path: &Path, table: &RegretTable) -> PipelineResult<()> {
    let rows = table.rows.iter().map(|r| {
        (
            &r.trip_id,
            &r.student_id,
            &r.day,
            r.key.to_string(),
            r.t_i,
            r.t_b,
            r.regret,
            r.is_baseline,
        )
    });
    write_rows(
        path,
        &["trip_id", "student_id", "day", "cluster", "t_i", "t_b", "regret", "is_baseline"],
        rows,
    )
}

pub(crate) fn students_csv(path: &Path, report: &RouteConsistencyReport) -> PipelineResult<()> {
    let rows = report.students.iter().map(|s| {
        (
            &s.student_id,
            s.trips,
            s.pairs,
            s.consistent_pairs,
            s.consistent.map_or_else(String::new, |c| c.to_string()),
            s.error.clone().unwrap_or_default(),
        )
    });
    write_rows(
        path,
        &["student_id", "trips", "pairs", "consistent_pairs", "consistent", "error"],
        rows,
    )
}

pub(crate) fn groups_csv(path: &Path, report: &PersistenceReport) -> PipelineResult<()> {
    let rows = report.details.iter().map(|g| {
        (
            g.key.to_string(),
            g.members.join(";"),
            g.fastest_by_day.keys().cloned().collect::<Vec<_>>().join(";"),
            g.persists,
        )
    });
    write_rows(path, &["cluster", "members", "days", "persists"], rows)
}

pub(crate) fn estimates_csv(path: &Path, estimates: &[FreeFlowEstimate]) -> PipelineResult<()> {
    let rows = estimates.iter().map(|e| {
        (
            &e.trip_id,
            e.freeflow_duration,
            serde_json::to_value(e.source).expect("source serializes").as_str().unwrap_or_default().to_string(),
            e.centroid_used.lat,
            e.centroid_used.lon,
        )
    });
    write_rows(
        path,
        &["trip_id", "freeflow_s", "source", "centroid_lat", "centroid_lon"],
        rows,
    )
}
