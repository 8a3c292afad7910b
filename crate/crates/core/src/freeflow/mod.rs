//! Free-flow (empty-road) duration providers and their persistent cache.
//!
//! Two providers implement [`FreeFlowProvider`]:
//!
//! * [`OfflineNetwork`] computes the zero-load shortest path on a
//!   [`RoadNetwork`](crate::simulator::RoadNetwork) plus walking access and
//!   egress, fully reproducibly.
//! * [`ExternalDirections`] asks a directions service through a minimal
//!   JSON-over-HTTP contract. All traffic goes through a [`Transport`], so
//!   tests replay recorded fixtures without network access.

pub mod cache;
pub mod external;
pub mod offline;
pub mod transport;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GeoPoint, Mode};

pub use cache::{cached_free_flow, CacheEntry, CacheKey, RouteCache};
pub use external::{ExternalDirections, RetryPolicy, API_KEY_ENV};
pub use offline::OfflineNetwork;
pub use transport::{FixtureTransport, HttpResponse, HttpTransport, RecordingTransport, Transport};

/// Durations below this are raised to it, keeping ratios finite.
pub const MIN_DURATION_S: f64 = 1.0;

#[derive(Debug, Error)]
pub enum FreeFlowError {
    #[error("route not found: {0}")]
    NotFound(String),
    #[error("start repositioned {distance_m:.0} m away from the requested origin")]
    RepositionedTooFar { distance_m: f64 },
    #[error("provider unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("missing credentials: set {API_KEY_ENV}")]
    MissingCredentials,
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

impl FreeFlowError {
    /// Per-query failures that drop the trip instead of aborting the run.
    pub fn is_droppable(&self) -> bool {
        matches!(
            self,
            FreeFlowError::NotFound(_) | FreeFlowError::RepositionedTooFar { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    ExternalApi,
    OfflineShortestPath,
}

pub trait FreeFlowProvider: Send + Sync {
    /// Best-case duration in seconds, at least [`MIN_DURATION_S`].
    fn query_route(
        &self,
        origin: GeoPoint,
        dest: GeoPoint,
        mode: Mode,
        optimistic: bool,
    ) -> Result<f64, FreeFlowError>;

    fn kind(&self) -> ProviderKind;

    /// Number of `query_route` calls served so far.
    fn calls(&self) -> usize;
}
