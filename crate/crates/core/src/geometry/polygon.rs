//! Planar polygon area, including self-intersecting rings.

use super::PlanarPoint;

/// Signed shoelace area; positive for counter-clockwise rings. The ring is
/// implicitly closed.
pub fn shoelace(ring: &[PlanarPoint]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

fn crossing_x(p0: PlanarPoint, p1: PlanarPoint, q0: PlanarPoint, q1: PlanarPoint) -> Option<f64> {
    let r = (p1.x - p0.x, p1.y - p0.y);
    let s = (q1.x - q0.x, q1.y - q0.y);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom == 0.0 {
        return None;
    }
    let qp = (q0.x - p0.x, q0.y - p0.y);
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = (qp.0 * r.1 - qp.1 * r.0) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| p0.x + t * r.0)
}

/// Area enclosed by a possibly self-intersecting ring, weighted by the
/// absolute winding number: `∫ |w(x, y)| dA`. For a simple ring this is
/// `|shoelace|`; for a figure-eight it is the sum of both lobes rather than
/// their difference; retraced stretches enclose nothing.
///
/// Computed exactly with a vertical slab sweep: between consecutive vertex
/// and crossing abscissae no two edges cross, so the winding profile of the
/// slab midline times the slab width is the slab's contribution.
pub fn winding_area(ring: &[PlanarPoint]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    // Vertical edges carry no slab length and are skipped.
    let mut edges: Vec<(PlanarPoint, PlanarPoint)> = (0..n)
        .map(|i| (ring[i], ring[(i + 1) % n]))
        .filter(|(a, b)| a.x != b.x)
        .collect();
    if edges.len() < 2 {
        return 0.0;
    }
    let lo = |e: &(PlanarPoint, PlanarPoint)| e.0.x.min(e.1.x);
    let hi = |e: &(PlanarPoint, PlanarPoint)| e.0.x.max(e.1.x);
    edges.sort_by(|a, b| lo(a).total_cmp(&lo(b)));

    let mut events: Vec<f64> = ring.iter().map(|p| p.x).collect();
    for i in 0..edges.len() {
        let (a0, a1) = edges[i];
        let (ay_lo, ay_hi) = (a0.y.min(a1.y), a0.y.max(a1.y));
        for e in &edges[i + 1..] {
            if lo(e) > hi(&edges[i]) {
                break;
            }
            if e.0.y.max(e.1.y) < ay_lo || e.0.y.min(e.1.y) > ay_hi {
                continue;
            }
            if let Some(x) = crossing_x(a0, a1, e.0, e.1) {
                events.push(x);
            }
        }
    }
    events.sort_by(f64::total_cmp);
    events.dedup();

    let mut area = 0.0;
    let mut next = 0;
    let mut active: Vec<usize> = Vec::new();
    let mut cuts: Vec<(f64, i32)> = Vec::new();
    for w in events.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 <= x0 {
            continue;
        }
        let mid = 0.5 * (x0 + x1);
        while next < edges.len() && lo(&edges[next]) <= mid {
            active.push(next);
            next += 1;
        }
        active.retain(|&i| hi(&edges[i]) > mid);
        cuts.clear();
        cuts.extend(active.iter().map(|&i| {
            let (a, b) = edges[i];
            let y = a.y + (b.y - a.y) * (mid - a.x) / (b.x - a.x);
            (y, if b.x > a.x { 1 } else { -1 })
        }));
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut winding = 0i32;
        let mut covered = 0.0;
        for k in 0..cuts.len() {
            winding += cuts[k].1;
            if winding != 0 && k + 1 < cuts.len() {
                covered += winding.unsigned_abs() as f64 * (cuts[k + 1].0 - cuts[k].0);
            }
        }
        area += (x1 - x0) * covered;
    }
    area
}
