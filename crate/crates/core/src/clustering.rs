//! Spatial clustering of home locations and the `(l, t, s, m)` keying of
//! comparable trips.
//!
//! Two spatial methods are available:
//!
//! * **Grid**: the bounding box of all homes is cut into square cells of
//!   edge `r`; homes in the same cell share a cluster. Fast, but two close
//!   homes on either side of a cell boundary end up apart.
//! * **Ball**: complete-linkage agglomerative clustering on geodesic
//!   distances, cut at `r`, so that every pair of homes in a cluster is at
//!   most `r` meters apart.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, EARTH_RADIUS_M};
use crate::model::{effective_mode, GeoPoint, ModeClass, TripRecord};

pub const DEFAULT_CLUSTER_SIZE_M: f64 = 400.0;
pub const DEFAULT_WINDOW_MIN: f64 = 20.0;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 2;
pub const DEFAULT_BALL_CAP: usize = 100_000;
/// Schools closer than this share a location.
pub const SCHOOL_MERGE_M: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusteringError {
    #[error("cluster size must be > 0, got {0}")]
    InvalidSize(f64),
    #[error("time window must be > 0 minutes, got {0}")]
    InvalidWindow(f64),
    #[error("no home locations to cluster")]
    Empty,
    #[error("distance matrix too large: {n} homes exceeds cap {cap}; use the grid method")]
    TooLarge { n: usize, cap: usize },
    #[error("trip {0} has no spatial cluster")]
    Unassigned(String),
    #[error("trip {trip_id} references unknown school {school_id}")]
    UnknownSchool { trip_id: String, school_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Grid,
    Ball,
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterMethod::Grid => "grid",
            ClusterMethod::Ball => "ball",
        })
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid" => Ok(ClusterMethod::Grid),
            "ball" => Ok(ClusterMethod::Ball),
            other => Err(format!("unknown cluster method `{other}` (grid|ball)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpatialClusterId(pub u32);

impl fmt::Display for SpatialClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialClustering {
    pub method: ClusterMethod,
    pub r_m: f64,
    pub assignment: BTreeMap<String, SpatialClusterId>,
    pub centroids: BTreeMap<SpatialClusterId, GeoPoint>,
}

impl SpatialClustering {
    pub fn cluster_of(&self, trip_id: &str) -> Option<SpatialClusterId> {
        self.assignment.get(trip_id).copied()
    }

    /// Stable label of a cluster, derived from its centroid to 1e-6°.
    pub fn cell_label(&self, id: SpatialClusterId) -> Option<String> {
        self.centroids
            .get(&id)
            .map(|c| format!("{:.6},{:.6}", c.lat, c.lon))
    }

    /// Members of each cluster, ascending by trip id.
    pub fn members(&self) -> BTreeMap<SpatialClusterId, Vec<&str>> {
        let mut out: BTreeMap<_, Vec<&str>> = BTreeMap::new();
        for (trip, id) in &self.assignment {
            out.entry(*id).or_default().push(trip.as_str());
        }
        out
    }
}

fn centroids_of(
    homes: &BTreeMap<String, GeoPoint>,
    assignment: &BTreeMap<String, SpatialClusterId>,
) -> BTreeMap<SpatialClusterId, GeoPoint> {
    let mut acc: BTreeMap<SpatialClusterId, (f64, f64, usize)> = BTreeMap::new();
    for (trip, id) in assignment {
        let p = homes[trip];
        let e = acc.entry(*id).or_insert((0.0, 0.0, 0));
        e.0 += p.lat;
        e.1 += p.lon;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(id, (lat, lon, n))| {
            (
                id,
                GeoPoint {
                    lat: lat / n as f64,
                    lon: lon / n as f64,
                },
            )
        })
        .collect()
}

fn check_inputs(homes: &BTreeMap<String, GeoPoint>, r: f64) -> Result<(), ClusteringError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(ClusteringError::InvalidSize(r));
    }
    if homes.is_empty() {
        return Err(ClusteringError::Empty);
    }
    Ok(())
}

/// Square cells of edge `r` laid from the lower-left corner of the homes'
/// bounding box (projected about the box center). A home on a cell boundary
/// belongs to the cell with the larger index.
pub fn grid_clusters(
    homes: &BTreeMap<String, GeoPoint>,
    r: f64,
) -> Result<SpatialClustering, ClusteringError> {
    check_inputs(homes, r)?;
    let (mut lat_lo, mut lat_hi, mut lon_lo, mut lon_hi) = (90.0f64, -90.0f64, 180.0f64, -180.0f64);
    for p in homes.values() {
        lat_lo = lat_lo.min(p.lat);
        lat_hi = lat_hi.max(p.lat);
        lon_lo = lon_lo.min(p.lon);
        lon_hi = lon_hi.max(p.lon);
    }
    let center = GeoPoint {
        lat: (lat_lo + lat_hi) / 2.0,
        lon: (lon_lo + lon_hi) / 2.0,
    };
    let planar: Vec<(&String, geometry::PlanarPoint)> = homes
        .par_iter()
        .map(|(id, p)| (id, geometry::project_unchecked(*p, center)))
        .collect();
    let x0 = planar.iter().map(|(_, p)| p.x).fold(f64::MAX, f64::min);
    let y0 = planar.iter().map(|(_, p)| p.y).fold(f64::MAX, f64::min);
    let cells: Vec<(&String, (i64, i64))> = planar
        .par_iter()
        .map(|(id, p)| {
            (
                *id,
                (((p.x - x0) / r).floor() as i64, ((p.y - y0) / r).floor() as i64),
            )
        })
        .collect();
    let mut ids: BTreeMap<(i64, i64), SpatialClusterId> = cells.iter().map(|(_, c)| (*c, SpatialClusterId(0))).collect();
    for (i, v) in ids.values_mut().enumerate() {
        *v = SpatialClusterId(i as u32);
    }
    let assignment: BTreeMap<String, SpatialClusterId> =
        cells.into_iter().map(|(id, c)| (id.clone(), ids[&c])).collect();
    let centroids = centroids_of(homes, &assignment);
    Ok(SpatialClustering {
        method: ClusterMethod::Grid,
        r_m: r,
        assignment,
        centroids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Pairs `(i, j, d)` with `i < j` and geodesic distance `d <= r`.
fn close_pairs(points: &[GeoPoint], r: f64) -> Vec<(usize, usize, f64)> {
    let dlat = (r / EARTH_RADIUS_M).to_degrees() * 1.001;
    let max_abs_lat = points.iter().map(|p| p.lat.abs()).fold(0.0, f64::max) + dlat;
    let cos = max_abs_lat.to_radians().cos();
    if max_abs_lat >= 89.0 || cos <= 1e-6 {
        return (0..points.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                ((i + 1)..points.len()).filter_map(move |j| {
                    let d = geometry::geodesic_distance(points[i], points[j]);
                    (d <= r).then_some((i, j, d))
                })
            })
            .collect();
    }
    let dlon = dlat / cos;
    let key = |p: &GeoPoint| ((p.lat / dlat).floor() as i64, (p.lon / dlon).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let mut pairs: Vec<(usize, usize, f64)> = (0..points.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (ki, kj) = key(&points[i]);
            let mut out = Vec::new();
            for di in -1..=1 {
                for dj in -1..=1 {
                    if let Some(bucket) = buckets.get(&(ki + di, kj + dj)) {
                        for &j in bucket {
                            if j > i {
                                let d = geometry::geodesic_distance(points[i], points[j]);
                                if d <= r {
                                    out.push((i, j, d));
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    pairs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    pairs
}

/// Complete-linkage clustering on geodesic distances, cut at `r`: every
/// output cluster has diameter at most `r`. Equal merge distances are
/// resolved by the lowest pair of trip ids.
pub fn ball_clusters(
    homes: &BTreeMap<String, GeoPoint>,
    r: f64,
) -> Result<SpatialClustering, ClusteringError> {
    ball_clusters_capped(homes, r, DEFAULT_BALL_CAP)
}

pub fn ball_clusters_capped(
    homes: &BTreeMap<String, GeoPoint>,
    r: f64,
    cap: usize,
) -> Result<SpatialClustering, ClusteringError> {
    check_inputs(homes, r)?;
    if homes.len() > cap {
        return Err(ClusteringError::TooLarge {
            n: homes.len(),
            cap,
        });
    }
    let ids: Vec<&String> = homes.keys().collect();
    let points: Vec<GeoPoint> = homes.values().copied().collect();
    let n = points.len();

    // Only merges at distance <= r are ever performed, and complete linkage
    // is monotone, so the sparse graph of close pairs carries every merge
    // the full algorithm would make below the cut.
    let mut links: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
    let mut rep: Vec<usize> = (0..n).collect();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut alive = vec![true; n];
    let mut heap = BinaryHeap::new();
    for (i, j, d) in close_pairs(&points, r) {
        links[i].insert(j, d);
        links[j].insert(i, d);
        heap.push(Reverse((Dist(d), i, j, i, j)));
    }

    while let Some(Reverse((Dist(d), _, _, a, b))) = heap.pop() {
        if !alive[a] || !alive[b] || links[a].get(&b) != Some(&d) {
            continue;
        }
        let c = members.len();
        alive[a] = false;
        alive[b] = false;
        let la = std::mem::take(&mut links[a]);
        let lb = std::mem::take(&mut links[b]);
        let mut lc = HashMap::new();
        for (&k, &da) in &la {
            if k == b {
                continue;
            }
            links[k].remove(&a);
            if let Some(&db) = lb.get(&k) {
                let dk = da.max(db);
                lc.insert(k, dk);
            }
        }
        for &k in lb.keys() {
            if k != a {
                links[k].remove(&b);
            }
        }
        let rc = rep[a].min(rep[b]);
        let mut m = std::mem::take(&mut members[a]);
        m.append(&mut members[b]);
        members.push(m);
        rep.push(rc);
        alive.push(true);
        for (&k, &dk) in &lc {
            links[k].insert(c, dk);
            let (lo, hi) = if rep[k] < rc { (rep[k], rc) } else { (rc, rep[k]) };
            heap.push(Reverse((Dist(dk), lo, hi, k.min(c), k.max(c))));
        }
        links.push(lc);
    }

    let mut clusters: Vec<Vec<usize>> = members
        .into_iter()
        .zip(alive)
        .filter(|(m, a)| *a && !m.is_empty())
        .map(|(mut m, _)| {
            m.sort_unstable();
            m
        })
        .collect();
    clusters.sort_by_key(|m| m[0]);
    let mut assignment = BTreeMap::new();
    for (cid, m) in clusters.iter().enumerate() {
        for &i in m {
            assignment.insert(ids[i].clone(), SpatialClusterId(cid as u32));
        }
    }
    let centroids = centroids_of(homes, &assignment);
    Ok(SpatialClustering {
        method: ClusterMethod::Ball,
        r_m: r,
        assignment,
        centroids,
    })
}

pub fn spatial_clusters(
    method: ClusterMethod,
    homes: &BTreeMap<String, GeoPoint>,
    r: f64,
) -> Result<SpatialClustering, ClusteringError> {
    match method {
        ClusterMethod::Grid => grid_clusters(homes, r),
        ClusterMethod::Ball => ball_clusters(homes, r),
    }
}

/// Home location of every trip, keyed by trip id.
pub fn homes_of(trips: &[TripRecord]) -> BTreeMap<String, GeoPoint> {
    trips.iter().map(|t| (t.trip_id.clone(), t.origin())).collect()
}

/// Maps each school to a canonical id shared by co-located schools (the
/// smallest id of the group).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SchoolIndex {
    canonical: BTreeMap<String, String>,
    locations: BTreeMap<String, GeoPoint>,
}

impl SchoolIndex {
    pub fn new(schools: &BTreeMap<String, GeoPoint>) -> Self {
        let ids: Vec<&String> = schools.keys().collect();
        let mut parent: Vec<usize> = (0..ids.len()).collect();
        fn find(parent: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while parent[r] != r {
                r = parent[r];
            }
            let mut j = i;
            while parent[j] != r {
                let next = parent[j];
                parent[j] = r;
                j = next;
            }
            r
        }
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                if geometry::geodesic_distance(schools[ids[i]], schools[ids[j]]) <= SCHOOL_MERGE_M {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    // ids are sorted, so the smaller root is the smaller id
                    let (lo, hi) = (ri.min(rj), ri.max(rj));
                    parent[hi] = lo;
                }
            }
        }
        let mut canonical = BTreeMap::new();
        let mut locations = BTreeMap::new();
        for i in 0..ids.len() {
            let root = find(&mut parent, i);
            canonical.insert(ids[i].clone(), ids[root].clone());
            locations.insert(ids[root].clone(), schools[ids[root]]);
        }
        SchoolIndex {
            canonical,
            locations,
        }
    }

    pub fn canonical(&self, school_id: &str) -> Option<&str> {
        self.canonical.get(school_id).map(String::as_str)
    }

    pub fn location(&self, school_id: &str) -> Option<GeoPoint> {
        self.canonical(school_id)
            .and_then(|c| self.locations.get(c))
            .copied()
    }
}

/// The comparability class of a trip within one day.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterKey {
    /// Spatial cluster of the home.
    pub l: SpatialClusterId,
    /// Departure window index, `floor(depart_time / window)`.
    pub t: u32,
    /// Canonical school location.
    pub s: String,
    pub m: ModeClass,
}

impl fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}/t{}/{}/{}", self.l, self.t, self.s, self.m)
    }
}

/// Trips of one day sharing a [`ClusterKey`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub day: String,
    pub key: ClusterKey,
    pub trips: Vec<TripRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyingParams {
    pub window_min: f64,
    pub min_size: usize,
}

impl Default for KeyingParams {
    fn default() -> Self {
        KeyingParams {
            window_min: DEFAULT_WINDOW_MIN,
            min_size: DEFAULT_MIN_CLUSTER_SIZE,
        }
    }
}

pub fn window_index(depart_time: f64, window_min: f64) -> u32 {
    (depart_time / (window_min * 60.0)).floor() as u32
}

type DayKey = (String, SpatialClusterId, u32, String);

fn base_key(
    trip: &TripRecord,
    spatial: &SpatialClustering,
    schools: &SchoolIndex,
    window_min: f64,
) -> Result<DayKey, ClusteringError> {
    let l = spatial
        .cluster_of(&trip.trip_id)
        .ok_or_else(|| ClusteringError::Unassigned(trip.trip_id.clone()))?;
    let s = schools
        .canonical(&trip.school_id)
        .ok_or_else(|| ClusteringError::UnknownSchool {
            trip_id: trip.trip_id.clone(),
            school_id: trip.school_id.clone(),
        })?;
    Ok((
        trip.day.clone(),
        l,
        window_index(trip.depart_time, window_min),
        s.to_string(),
    ))
}

/// Groups trips by day and `(l, t, s, m)`, dropping groups below
/// `min_size`. Output is ordered by `(day, key)`; members by trip id.
pub fn key_clusters(
    trips: &[TripRecord],
    spatial: &SpatialClustering,
    schools: &SchoolIndex,
    params: KeyingParams,
) -> Result<Vec<Cluster>, ClusteringError> {
    if !(params.window_min > 0.0) {
        return Err(ClusteringError::InvalidWindow(params.window_min));
    }
    let mut groups: BTreeMap<(String, ClusterKey), Vec<TripRecord>> = BTreeMap::new();
    for trip in trips {
        let (day, l, t, s) = base_key(trip, spatial, schools, params.window_min)?;
        let key = ClusterKey {
            l,
            t,
            s,
            m: effective_mode(trip).class(),
        };
        groups.entry((day, key)).or_default().push(trip.clone());
    }
    Ok(groups
        .into_iter()
        .filter(|(_, v)| v.len() >= params.min_size.max(1))
        .map(|((day, key), mut trips)| {
            trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
            Cluster { day, key, trips }
        })
        .collect())
}

/// Trips of one day sharing `(l, t, s)` with at least one public and one
/// private member.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixedCluster {
    pub day: String,
    pub l: SpatialClusterId,
    pub t: u32,
    pub s: String,
    pub trips: Vec<TripRecord>,
}

/// Re-keys trips on `(l, t, s)` only and keeps the groups that mix public
/// and private users.
pub fn mixed_clusters(
    trips: &[TripRecord],
    spatial: &SpatialClustering,
    schools: &SchoolIndex,
    window_min: f64,
) -> Result<Vec<MixedCluster>, ClusteringError> {
    if !(window_min > 0.0) {
        return Err(ClusteringError::InvalidWindow(window_min));
    }
    let mut groups: BTreeMap<DayKey, Vec<TripRecord>> = BTreeMap::new();
    for trip in trips {
        groups
            .entry(base_key(trip, spatial, schools, window_min)?)
            .or_default()
            .push(trip.clone());
    }
    Ok(groups
        .into_iter()
        .filter(|(_, v)| {
            v.iter().any(|t| effective_mode(t).is_public())
                && v.iter().any(|t| !effective_mode(t).is_public())
        })
        .map(|((day, l, t, s), mut trips)| {
            trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
            MixedCluster { day, l, t, s, trips }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{unproject, PlanarPoint};
    use crate::model::{Mode, TripPoint};
    use proptest::prelude::*;

    const SG: GeoPoint = GeoPoint { lat: 1.35, lon: 103.82 };

    fn homes_at(xy: &[(f64, f64)]) -> BTreeMap<String, GeoPoint> {
        xy.iter()
            .enumerate()
            .map(|(i, &(x, y))| (format!("h{i:04}"), unproject(PlanarPoint { x, y }, SG)))
            .collect()
    }

    fn partition(c: &SpatialClustering) -> Vec<Vec<String>> {
        let mut v: Vec<Vec<String>> = c
            .members()
            .into_values()
            .map(|m| m.into_iter().map(String::from).collect())
            .collect();
        v.sort();
        v
    }

    #[test]
    fn identical_points_form_one_cell() {
        let homes = homes_at(&[(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        let g = grid_clusters(&homes, 400.0).unwrap();
        assert_eq!(g.centroids.len(), 1);
        let b = ball_clusters(&homes, 400.0).unwrap();
        assert_eq!(b.centroids.len(), 1);
    }

    #[test]
    fn grid_cell_arithmetic() {
        let g = grid_clusters(&homes_at(&[(0.0, 0.0), (600.0, 0.0)]), 400.0).unwrap();
        assert_eq!(g.centroids.len(), 2);
        // origin pinned at x = 0 by the first home: 395 -> cell 0, 405 -> cell 1
        let g = grid_clusters(&homes_at(&[(0.0, 0.0), (395.0, 0.0), (405.0, 0.0)]), 400.0).unwrap();
        assert_eq!(g.cluster_of("h0000"), g.cluster_of("h0001"));
        assert_ne!(g.cluster_of("h0001"), g.cluster_of("h0002"));
    }

    #[test]
    fn complete_linkage_trace_on_three_collinear_points() {
        let homes = homes_at(&[(0.0, 0.0), (300.0, 0.0), (600.0, 0.0)]);
        let b = ball_clusters(&homes, 400.0).unwrap();
        assert_eq!(
            partition(&b),
            vec![vec!["h0000".to_string(), "h0001".into()], vec!["h0002".into()]]
        );
    }

    #[test]
    fn singleton_and_cap() {
        let homes = homes_at(&[(0.0, 0.0)]);
        assert_eq!(ball_clusters(&homes, 400.0).unwrap().centroids.len(), 1);
        let many = homes_at(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert!(matches!(
            ball_clusters_capped(&many, 400.0, 2),
            Err(ClusteringError::TooLarge { n: 3, cap: 2 })
        ));
        assert_eq!(grid_clusters(&BTreeMap::new(), 400.0), Err(ClusteringError::Empty));
        assert_eq!(grid_clusters(&many, 0.0), Err(ClusteringError::InvalidSize(0.0)));
    }

    fn trip(id: &str, depart: f64, mode: Mode, home: GeoPoint) -> TripRecord {
        TripRecord {
            trip_id: id.into(),
            student_id: format!("s-{id}"),
            day: "2016-11-14".into(),
            school_id: "k1".into(),
            mode,
            points: vec![
                TripPoint { t: 1000.0, loc: home },
                TripPoint { t: 2000.0, loc: GeoPoint { lat: 1.40, lon: 103.82 } },
            ],
            depart_time: depart,
            per_mode_distance: None,
        }
    }

    fn keyed(trips: &[TripRecord]) -> Vec<Cluster> {
        let spatial = grid_clusters(&homes_of(trips), 400.0).unwrap();
        let schools = SchoolIndex::new(&BTreeMap::from([(
            "k1".to_string(),
            GeoPoint { lat: 1.40, lon: 103.82 },
        )]));
        key_clusters(trips, &spatial, &schools, KeyingParams::default()).unwrap()
    }

    #[test]
    fn same_window_makes_a_cluster() {
        let c = keyed(&[
            trip("a", 8.0 * 3600.0 + 300.0, Mode::Bus, SG),
            trip("b", 8.0 * 3600.0 + 900.0, Mode::Bus, SG),
        ]);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].trips.len(), 2);
    }

    #[test]
    fn window_boundary_splits_into_dropped_singletons() {
        // 08:15 -> 495 min -> window 24; 08:25 -> 505 min -> window 25
        assert_eq!(window_index(495.0 * 60.0, 20.0), 24);
        assert_eq!(window_index(505.0 * 60.0, 20.0), 25);
        let c = keyed(&[
            trip("a", 495.0 * 60.0, Mode::Bus, SG),
            trip("b", 505.0 * 60.0, Mode::Bus, SG),
        ]);
        assert!(c.is_empty());
    }

    #[test]
    fn modes_split_clusters() {
        let trips = [
            trip("a", 8.0 * 3600.0, Mode::Car, SG),
            trip("b", 8.0 * 3600.0, Mode::Bus, SG),
        ];
        assert!(keyed(&trips).is_empty());
        let spatial = grid_clusters(&homes_of(&trips), 400.0).unwrap();
        let schools = SchoolIndex::new(&BTreeMap::from([(
            "k1".to_string(),
            GeoPoint { lat: 1.40, lon: 103.82 },
        )]));
        let mixed = mixed_clusters(&trips, &spatial, &schools, 20.0).unwrap();
        assert_eq!(mixed.len(), 1);
    }

    #[test]
    fn unassigned_trip_is_named() {
        let trips = [trip("a", 0.0, Mode::Car, SG)];
        let spatial = grid_clusters(&homes_at(&[(0.0, 0.0)]), 400.0).unwrap();
        let schools = SchoolIndex::new(&BTreeMap::from([("k1".to_string(), SG)]));
        assert_eq!(
            key_clusters(&trips, &spatial, &schools, KeyingParams::default()),
            Err(ClusteringError::Unassigned("a".into()))
        );
    }

    #[test]
    fn co_located_schools_merge() {
        let idx = SchoolIndex::new(&BTreeMap::from([
            ("primary".to_string(), SG),
            ("secondary".to_string(), GeoPoint { lat: SG.lat + 1e-5, lon: SG.lon }),
            ("other".to_string(), GeoPoint { lat: 1.40, lon: 103.9 }),
        ]));
        assert_eq!(idx.canonical("secondary"), Some("primary"));
        assert_eq!(idx.canonical("primary"), Some("primary"));
        assert_eq!(idx.canonical("other"), Some("other"));
    }

    fn diameter_ok(c: &SpatialClustering, homes: &BTreeMap<String, GeoPoint>) -> bool {
        c.members().values().all(|m| {
            m.iter().all(|a| {
                m.iter()
                    .all(|b| geometry::geodesic_distance(homes[*a], homes[*b]) <= c.r_m)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ball_diameter_and_refinement(
            xy in prop::collection::vec((0.0f64..3000.0, 0.0f64..3000.0), 1..120),
            r in 50.0f64..800.0,
        ) {
            let homes = homes_at(&xy);
            let big = ball_clusters(&homes, r).unwrap();
            prop_assert!(diameter_ok(&big, &homes));
            let small = ball_clusters(&homes, r * 0.6).unwrap();
            prop_assert!(diameter_ok(&small, &homes));
            // every small cluster sits inside one big cluster
            for m in small.members().values() {
                let parent = big.cluster_of(m[0]);
                prop_assert!(m.iter().all(|t| big.cluster_of(t) == parent));
            }
        }

        #[test]
        fn grid_cells_are_bounded(
            xy in prop::collection::vec((0.0f64..5000.0, 0.0f64..5000.0), 1..150),
            r in 100.0f64..1000.0,
        ) {
            let homes = homes_at(&xy);
            let g = grid_clusters(&homes, r).unwrap();
            for m in g.members().values() {
                for a in m {
                    for b in m {
                        let d = geometry::geodesic_distance(homes[*a], homes[*b]);
                        prop_assert!(d <= r * 2f64.sqrt() * (1.0 + 1e-3));
                    }
                }
            }
        }
    }
}
