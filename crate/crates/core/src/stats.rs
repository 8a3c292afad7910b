//! Nearest-rank order statistics shared by trimming and (ε,δ) extraction.

/// Slack used when turning a percentile into a rank, so that `95% of 100`
/// lands on rank 95 despite `0.95` not being representable.
const RANK_SLACK: f64 = 1e-9;

/// 1-based nearest-rank for percentile `pct` over `n` sorted values.
///
/// `pct = 0` maps to the minimum (rank 1) and `pct = 100` to the maximum.
pub fn nearest_rank(n: usize, pct: f64) -> usize {
    assert!(n > 0, "nearest rank of an empty sample");
    let raw = (pct / 100.0 * n as f64 - RANK_SLACK).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    sorted[nearest_rank(sorted.len(), pct) - 1]
}

/// Median by nearest rank is biased for even sizes; this is the usual
/// midpoint median used for reporting.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
