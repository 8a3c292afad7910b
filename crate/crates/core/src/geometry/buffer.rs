//! Area of the band swept around a planar polyline.
//!
//! The band is the union of one rectangle per segment (half-width `h`, butt
//! ends) and a round-join wedge on the outer side of every interior vertex.
//! The union area is computed exactly for the polygonal pieces with a
//! vertical slab decomposition: between two consecutive event abscissae
//! (piece vertices and pairwise edge crossings) the covered length of every
//! vertical line is linear in `x`, so each slab contributes its width times
//! the covered length at its midline.

use std::f64::consts::PI;

use super::PlanarPoint;

/// Angular resolution of round joins.
const ARC_STEP: f64 = PI / 32.0;

#[derive(Debug, Clone)]
struct Piece {
    verts: Vec<PlanarPoint>,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Piece {
    fn new(verts: Vec<PlanarPoint>) -> Self {
        let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for v in &verts {
            x_lo = x_lo.min(v.x);
            x_hi = x_hi.max(v.x);
            y_lo = y_lo.min(v.y);
            y_hi = y_hi.max(v.y);
        }
        Piece {
            verts,
            x_lo,
            x_hi,
            y_lo,
            y_hi,
        }
    }

    fn edges(&self) -> impl Iterator<Item = (PlanarPoint, PlanarPoint)> + '_ {
        let n = self.verts.len();
        (0..n).map(move |i| (self.verts[i], self.verts[(i + 1) % n]))
    }

    /// Vertical extent of this convex piece along the line `x`.
    fn span_at(&self, x: f64) -> Option<(f64, f64)> {
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for (a, b) in self.edges() {
            let (l, r) = if a.x <= b.x { (a, b) } else { (b, a) };
            if l.x == r.x || x < l.x || x > r.x {
                continue;
            }
            let y = l.y + (r.y - l.y) * (x - l.x) / (r.x - l.x);
            lo = lo.min(y);
            hi = hi.max(y);
        }
        (lo <= hi).then_some((lo, hi))
    }
}

fn sub(a: PlanarPoint, b: PlanarPoint) -> (f64, f64) {
    (a.x - b.x, a.y - b.y)
}

fn offset(p: PlanarPoint, dir: (f64, f64), d: f64) -> PlanarPoint {
    PlanarPoint {
        x: p.x + dir.0 * d,
        y: p.y + dir.1 * d,
    }
}

fn pieces(line: &[PlanarPoint], half_width: f64) -> Vec<Piece> {
    let mut pts: Vec<PlanarPoint> = Vec::with_capacity(line.len());
    for &p in line {
        if pts.last() != Some(&p) {
            pts.push(p);
        }
    }
    let mut out = Vec::new();
    let mut dirs = Vec::with_capacity(pts.len());
    for w in pts.windows(2) {
        let (dx, dy) = sub(w[1], w[0]);
        let len = dx.hypot(dy);
        let u = (dx / len, dy / len);
        let left = (-u.1, u.0);
        dirs.push(u);
        out.push(Piece::new(vec![
            offset(w[0], left, -half_width),
            offset(w[1], left, -half_width),
            offset(w[1], left, half_width),
            offset(w[0], left, half_width),
        ]));
    }
    for (i, pair) in dirs.windows(2).enumerate() {
        let (u1, u2) = (pair[0], pair[1]);
        let cross = u1.0 * u2.1 - u1.1 * u2.0;
        let dot = u1.0 * u2.0 + u1.1 * u2.1;
        let turn = cross.atan2(dot);
        if turn.abs() < 1e-12 {
            continue;
        }
        // Outer side is the right side for a left turn and vice versa.
        let side = if turn > 0.0 { -1.0 } else { 1.0 };
        let start = (-u1.1 * side, u1.0 * side);
        let steps = (turn.abs() / ARC_STEP).ceil().max(1.0) as usize;
        let vertex = pts[i + 1];
        let mut verts = Vec::with_capacity(steps + 2);
        verts.push(vertex);
        for k in 0..=steps {
            let a = turn * k as f64 / steps as f64;
            let (s, c) = a.sin_cos();
            let dir = (start.0 * c - start.1 * s, start.0 * s + start.1 * c);
            verts.push(offset(vertex, dir, half_width));
        }
        out.push(Piece::new(verts));
    }
    out
}

fn edge_crossing_x(a0: PlanarPoint, a1: PlanarPoint, b0: PlanarPoint, b1: PlanarPoint) -> Option<f64> {
    let r = sub(a1, a0);
    let s = sub(b1, b0);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom == 0.0 {
        return None;
    }
    let qp = sub(b0, a0);
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = (qp.0 * r.1 - qp.1 * r.0) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| a0.x + t * r.0)
}

/// Area covered by the band of half-width `half_width` around `line`.
pub fn band_area(line: &[PlanarPoint], half_width: f64) -> f64 {
    let pieces = pieces(line, half_width);
    if pieces.is_empty() {
        return 0.0;
    }

    let mut events: Vec<f64> = pieces
        .iter()
        .flat_map(|p| p.verts.iter().map(|v| v.x))
        .collect();
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.sort_by(|&a, &b| pieces[a].x_lo.total_cmp(&pieces[b].x_lo));
    for (oi, &i) in order.iter().enumerate() {
        let pi = &pieces[i];
        for &j in &order[oi + 1..] {
            let pj = &pieces[j];
            if pj.x_lo > pi.x_hi {
                break;
            }
            if pj.y_lo > pi.y_hi || pj.y_hi < pi.y_lo {
                continue;
            }
            for (a0, a1) in pi.edges() {
                for (b0, b1) in pj.edges() {
                    if let Some(x) = edge_crossing_x(a0, a1, b0, b1) {
                        events.push(x);
                    }
                }
            }
        }
    }
    events.sort_by(f64::total_cmp);
    events.dedup();

    let mut area = 0.0;
    let mut next = 0;
    let mut active: Vec<usize> = Vec::new();
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for w in events.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 - x0 <= 0.0 {
            continue;
        }
        let mid = 0.5 * (x0 + x1);
        while next < order.len() && pieces[order[next]].x_lo <= mid {
            active.push(order[next]);
            next += 1;
        }
        active.retain(|&i| pieces[i].x_hi >= mid);
        spans.clear();
        spans.extend(active.iter().filter_map(|&i| pieces[i].span_at(mid)));
        if spans.is_empty() {
            continue;
        }
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let (mut lo, mut hi) = spans[0];
        for &(l, h) in &spans[1..] {
            if l > hi {
                covered += hi - lo;
                lo = l;
                hi = h;
            } else {
                hi = hi.max(h);
            }
        }
        covered += hi - lo;
        area += (x1 - x0) * covered;
    }
    area
}
