use std::sync::atomic::{AtomicUsize, Ordering};

use super::{FreeFlowError, FreeFlowProvider, ProviderKind, MIN_DURATION_S};
use crate::geometry::geodesic_distance;
use crate::model::{GeoPoint, Mode};
use crate::simulator::assignment::free_flow_time;
use crate::simulator::RoadNetwork;

pub const WALK_SPEED_MPS: f64 = 1.4;
pub const DEFAULT_MAX_SNAP_M: f64 = 2_000.0;

/// Zero-load shortest path between the nodes nearest to each endpoint,
/// plus walking time to and from those nodes. Transit waiting time is not
/// modelled, which matches a free-flow lower bound.
#[derive(Debug)]
pub struct OfflineNetwork {
    net: RoadNetwork,
    pub walk_speed_mps: f64,
    /// Endpoints farther than this from every node are not served.
    pub max_snap_m: f64,
    calls: AtomicUsize,
}

impl OfflineNetwork {
    pub fn new(net: RoadNetwork) -> Self {
        OfflineNetwork {
            net,
            walk_speed_mps: WALK_SPEED_MPS,
            max_snap_m: DEFAULT_MAX_SNAP_M,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    fn snap(&self, p: GeoPoint) -> Result<(usize, f64), FreeFlowError> {
        let (node, d) = self
            .net
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| (i, geodesic_distance(p, n.loc)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .ok_or_else(|| FreeFlowError::NotFound("empty network".into()))?;
        if d > self.max_snap_m {
            return Err(FreeFlowError::RepositionedTooFar { distance_m: d });
        }
        Ok((node, d))
    }
}

impl FreeFlowProvider for OfflineNetwork {
    fn query_route(
        &self,
        origin: GeoPoint,
        dest: GeoPoint,
        _mode: Mode,
        _optimistic: bool,
    ) -> Result<f64, FreeFlowError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (o, walk_o) = self.snap(origin)?;
        let (d, walk_d) = self.snap(dest)?;
        let ride = if o == d {
            0.0
        } else {
            free_flow_time(&self.net, o, d).ok_or_else(|| {
                FreeFlowError::NotFound(format!(
                    "no path from {} to {}",
                    self.net.node_id(o),
                    self.net.node_id(d)
                ))
            })?
        };
        Ok(((walk_o + walk_d) / self.walk_speed_mps + ride).max(MIN_DURATION_S))
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::OfflineShortestPath
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}
