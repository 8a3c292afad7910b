//! Distances, local projection and the route-comparison areas.
//!
//! Two routes sharing home and school are compared by the area enclosed
//! between them (`route_area`). Whether that area is small is judged against
//! the areas of bands of width `w` drawn around each route
//! (`contour_area`): the routes are consistent when the enclosed area is
//! below the mean of the two band areas.

mod buffer;
mod polygon;

pub use polygon::{shoelace, winding_area};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::GeoPoint;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Largest distance from the origin accepted by [`project_local`].
pub const PROJECTION_LIMIT_M: f64 = 100_000.0;
/// Largest gap between the shared endpoints of two compared routes.
pub const ENDPOINT_TOLERANCE_M: f64 = 50.0;
/// Default full band width.
pub const DEFAULT_BAND_WIDTH_M: f64 = 80.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("projection domain exceeded: {distance_m:.0} m from origin (limit {PROJECTION_LIMIT_M} m)")]
    ProjectionDomainExceeded { distance_m: f64 },
    #[error("routes do not share endpoints (gap {gap_m:.1} m > {ENDPOINT_TOLERANCE_M} m)")]
    EndpointMismatch { gap_m: f64 },
    #[error("a route needs at least 2 points")]
    TooFewPoints,
    #[error("band width must be > 0, got {0}")]
    InvalidBandWidth(f64),
}

/// Meters east (`x`) and north (`y`) of a projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

/// Enclosed area between two routes, in m².
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RoutePolygonDistance {
    pub area: f64,
}

/// Full width of the band drawn around a route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourParams {
    pub band_width_m: f64,
}

impl ContourParams {
    pub fn new(band_width_m: f64) -> Result<Self, GeometryError> {
        if band_width_m > 0.0 && band_width_m.is_finite() {
            Ok(ContourParams { band_width_m })
        } else {
            Err(GeometryError::InvalidBandWidth(band_width_m))
        }
    }
}

impl Default for ContourParams {
    fn default() -> Self {
        ContourParams {
            band_width_m: DEFAULT_BAND_WIDTH_M,
        }
    }
}

/// Great-circle (haversine) distance in meters.
pub fn geodesic_distance(p: GeoPoint, q: GeoPoint) -> f64 {
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (q.lon - p.lon).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Equirectangular projection about `origin`, without a domain check.
/// Distortion grows with the latitude span; below 0.1 % within 50 km at
/// tropical latitudes.
pub fn project_unchecked(p: GeoPoint, origin: GeoPoint) -> PlanarPoint {
    let k = EARTH_RADIUS_M * origin.lat.to_radians().cos();
    PlanarPoint {
        x: k * (p.lon - origin.lon).to_radians(),
        y: EARTH_RADIUS_M * (p.lat - origin.lat).to_radians(),
    }
}

/// Projects points about `origin`; every point must lie within
/// [`PROJECTION_LIMIT_M`] of it.
pub fn project_local(
    points: &[GeoPoint],
    origin: GeoPoint,
) -> Result<Vec<PlanarPoint>, GeometryError> {
    points
        .iter()
        .map(|&p| {
            let d = geodesic_distance(p, origin);
            if d > PROJECTION_LIMIT_M {
                Err(GeometryError::ProjectionDomainExceeded { distance_m: d })
            } else {
                Ok(project_unchecked(p, origin))
            }
        })
        .collect()
}

/// Inverse of [`project_unchecked`].
pub fn unproject(p: PlanarPoint, origin: GeoPoint) -> GeoPoint {
    let k = EARTH_RADIUS_M * origin.lat.to_radians().cos();
    GeoPoint {
        lat: origin.lat + (p.y / EARTH_RADIUS_M).to_degrees(),
        lon: origin.lon + (p.x / k).to_degrees(),
    }
}

fn mean_point(points: &[GeoPoint]) -> GeoPoint {
    let n = points.len() as f64;
    GeoPoint {
        lat: points.iter().map(|p| p.lat).sum::<f64>() / n,
        lon: points.iter().map(|p| p.lon).sum::<f64>() / n,
    }
}

/// Area enclosed between two routes that share home and school.
///
/// The ring walks `a` forwards and `b` backwards. Its area is the integral
/// of the absolute winding number, so lobes on either side of a crossing
/// add up instead of cancelling.
pub fn route_area(a: &[GeoPoint], b: &[GeoPoint]) -> Result<RoutePolygonDistance, GeometryError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(GeometryError::TooFewPoints);
    }
    let (a1, an) = (a[0], a[a.len() - 1]);
    let (b1, bm) = (b[0], b[b.len() - 1]);
    let gap = geodesic_distance(a1, b1).max(geodesic_distance(an, bm));
    if gap > ENDPOINT_TOLERANCE_M {
        return Err(GeometryError::EndpointMismatch { gap_m: gap });
    }
    let origin = mean_point(&[a1, b1, an, bm]);
    // Shared leading and trailing stretches enclose nothing; dropping them
    // keeps retraced segments from producing spurious crossings.
    let max_shared = a.len().min(b.len());
    let pre = a.iter().zip(b).take_while(|(p, q)| p == q).count();
    if pre == a.len() && pre == b.len() {
        return Ok(RoutePolygonDistance { area: 0.0 });
    }
    let limit = max_shared - pre.min(max_shared);
    let suf = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take(limit)
        .take_while(|(p, q)| p == q)
        .count();
    let lo = pre.saturating_sub(1);
    let (a_core, b_core) = (
        &a[lo..(a.len() - suf.saturating_sub(1)).max(lo + 1)],
        &b[lo..(b.len() - suf.saturating_sub(1)).max(lo + 1)],
    );
    let ring: Vec<GeoPoint> = a_core.iter().chain(b_core.iter().rev()).copied().collect();
    let planar = project_local(&ring, origin)?;
    Ok(RoutePolygonDistance {
        area: winding_area(&planar),
    })
}

/// Area of the band of full width `w` around a route: the Minkowski buffer
/// of radius `w/2` with flat ends at the first and last point.
pub fn contour_area(route: &[GeoPoint], params: ContourParams) -> Result<f64, GeometryError> {
    if route.len() < 2 {
        return Err(GeometryError::TooFewPoints);
    }
    if !(params.band_width_m > 0.0) {
        return Err(GeometryError::InvalidBandWidth(params.band_width_m));
    }
    let origin = mean_point(&[route[0], route[route.len() - 1]]);
    let planar = project_local(route, origin)?;
    Ok(buffer::band_area(&planar, params.band_width_m / 2.0))
}

/// Enclosed area against the mean band area of the two routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyCheck {
    pub enclosed_area: f64,
    pub contour_a: f64,
    pub contour_b: f64,
    pub consistent: bool,
}

pub fn compare_routes(
    a: &[GeoPoint],
    b: &[GeoPoint],
    params: ContourParams,
) -> Result<ConsistencyCheck, GeometryError> {
    let enclosed = route_area(a, b)?.area;
    let ca = contour_area(a, params)?;
    let cb = contour_area(b, params)?;
    Ok(ConsistencyCheck {
        enclosed_area: enclosed,
        contour_a: ca,
        contour_b: cb,
        consistent: enclosed < (ca + cb) / 2.0,
    })
}

/// `route_area(a, b) < (contour_area(a) + contour_area(b)) / 2`.
pub fn routes_consistent(
    a: &[GeoPoint],
    b: &[GeoPoint],
    params: ContourParams,
) -> Result<bool, GeometryError> {
    compare_routes(a, b, params).map(|c| c.consistent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SG: GeoPoint = GeoPoint { lat: 1.35, lon: 103.82 };

    fn along(origin: GeoPoint, pts: &[(f64, f64)]) -> Vec<GeoPoint> {
        pts.iter()
            .map(|&(x, y)| unproject(PlanarPoint { x, y }, origin))
            .collect()
    }

    #[test]
    fn one_degree_of_longitude_at_the_equator() {
        let d = geodesic_distance(GeoPoint { lat: 0.0, lon: 0.0 }, GeoPoint { lat: 0.0, lon: 1.0 });
        assert!((d - 111_194.9).abs() < 0.1, "{d}");
        assert_eq!(geodesic_distance(SG, SG), 0.0);
    }

    #[test]
    fn projection_examples() {
        let pts = project_local(&[SG], SG).unwrap();
        assert_eq!(pts[0], PlanarPoint { x: 0.0, y: 0.0 });
        let o = GeoPoint { lat: 1.35, lon: 103.8 };
        let q = GeoPoint { lat: 1.35, lon: 103.801 };
        let p = project_local(&[q], o).unwrap()[0];
        assert!((p.x - 111.16).abs() < 0.01, "{}", p.x);
        assert!(p.y.abs() < 0.01);
        let far = GeoPoint { lat: 2.5, lon: 103.8 };
        assert!(matches!(
            project_local(&[far], o),
            Err(GeometryError::ProjectionDomainExceeded { .. })
        ));
    }

    #[test]
    fn identical_routes_enclose_nothing() {
        let r = along(SG, &[(0.0, 0.0), (200.0, 50.0), (400.0, -30.0), (900.0, 10.0)]);
        assert_eq!(route_area(&r, &r).unwrap().area, 0.0);
        assert!(routes_consistent(&r, &r, ContourParams::default()).unwrap());
    }

    #[test]
    fn perpendicular_detour_is_a_triangle() {
        let a = along(SG, &[(0.0, 0.0), (1000.0, 0.0)]);
        let b = along(SG, &[(0.0, 0.0), (500.0, 500.0), (1000.0, 0.0)]);
        let area = route_area(&a, &b).unwrap().area;
        // Shoelace of (0,0),(1000,0),(500,500): 250,000 m². The origin is
        // the endpoint midpoint, so the projection scale differs from the
        // construction origin by cos(lat) only to ~1e-9.
        assert!((area - 250_000.0).abs() < 0.01, "{area}");
        assert!((area - route_area(&b, &a).unwrap().area).abs() < 1e-6);
    }

    #[test]
    fn endpoint_mismatch_is_an_error() {
        let a = along(SG, &[(0.0, 0.0), (1000.0, 0.0)]);
        let b = along(SG, &[(0.0, 60.0), (1000.0, 0.0)]);
        assert!(matches!(route_area(&a, &b), Err(GeometryError::EndpointMismatch { .. })));
        let b = along(SG, &[(0.0, 40.0), (1000.0, 0.0)]);
        assert!(route_area(&a, &b).is_ok());
    }

    #[test]
    fn contour_of_a_straight_kilometer() {
        let r = along(SG, &[(0.0, 0.0), (1000.0, 0.0)]);
        let area = contour_area(&r, ContourParams::new(50.0).unwrap()).unwrap();
        assert!((area - 50_000.0).abs() / 50_000.0 < 0.02, "{area}");
        let wider = contour_area(&r, ContourParams::new(100.0).unwrap()).unwrap();
        assert!(wider > area);
    }

    #[test]
    fn back_and_forth_is_not_double_counted() {
        let once = along(SG, &[(0.0, 0.0), (1000.0, 0.0)]);
        let twice = along(SG, &[(0.0, 0.0), (1000.0, 0.0), (0.0, 0.0)]);
        let w = ContourParams::new(50.0).unwrap();
        let a = contour_area(&once, w).unwrap();
        let b = contour_area(&twice, w).unwrap();
        // union of two identical rectangles = one rectangle; the round join at
        // the turnaround adds a half disc (π·25²/2 ≈ 982 m²)
        assert!((b - a).abs() / a < 0.02, "{a} {b}");
    }

    #[test]
    fn far_translate_is_inconsistent() {
        let w = ContourParams::default();
        let off = 10.0 * w.band_width_m;
        let a = along(SG, &[(0.0, 0.0), (500.0, 0.0), (1000.0, 0.0)]);
        let b = along(SG, &[(0.0, 0.0), (0.0, off), (1000.0, off), (1000.0, 0.0)]);
        assert!(!routes_consistent(&a, &b, w).unwrap());
        assert!(!routes_consistent(&b, &a, w).unwrap());
    }

    #[test]
    fn invalid_inputs() {
        let r = along(SG, &[(0.0, 0.0)]);
        assert_eq!(contour_area(&r, ContourParams::default()), Err(GeometryError::TooFewPoints));
        assert!(ContourParams::new(0.0).is_err());
        assert!(ContourParams::new(-3.0).is_err());
    }

    fn route_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-300.0f64..300.0, -300.0f64..300.0), 0..6).prop_map(|mid| {
            let mut v = vec![(0.0, 0.0)];
            v.extend(mid.into_iter().enumerate().map(|(i, (x, y))| (150.0 * (i as f64 + 1.0) + x, y)));
            v.push((1200.0, 0.0));
            v
        })
    }

    proptest! {
        #[test]
        fn route_area_properties(a in route_strategy(), b in route_strategy()) {
            let (ga, gb) = (along(SG, &a), along(SG, &b));
            let ab = route_area(&ga, &gb).unwrap().area;
            let ba = route_area(&gb, &ga).unwrap().area;
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-6 * ab.max(1.0));
            prop_assert_eq!(route_area(&ga, &ga).unwrap().area, 0.0);
            let w = ContourParams::default();
            prop_assert_eq!(
                routes_consistent(&ga, &gb, w).unwrap(),
                routes_consistent(&gb, &ga, w).unwrap()
            );
        }

        #[test]
        fn contour_grows_with_width_and_length(
            r in route_strategy(), w in 5.0f64..200.0, extra in 10.0f64..500.0,
        ) {
            let g = along(SG, &r);
            let narrow = contour_area(&g, ContourParams::new(w).unwrap()).unwrap();
            let wide = contour_area(&g, ContourParams::new(w * 1.5).unwrap()).unwrap();
            prop_assert!(wide > narrow);
            let mut longer = r.clone();
            longer.push((1200.0 + extra, 40.0));
            let l = contour_area(&along(SG, &longer), ContourParams::new(w).unwrap()).unwrap();
            prop_assert!(l >= narrow * (1.0 - 1e-5));
        }
    }
}
