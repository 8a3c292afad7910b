use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::transport::Transport;
use super::{FreeFlowError, FreeFlowProvider, ProviderKind, MIN_DURATION_S};
use crate::geometry::geodesic_distance;
use crate::model::{GeoPoint, Mode};

pub const API_KEY_ENV: &str = "FREEFLOW_API_KEY";

/// Providers that move the start of the trip onto the network farther than
/// this are answering a different question; such rows are dropped.
pub const DEFAULT_MAX_REPOSITION_M: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_delay)
    }
}

#[derive(Deserialize)]
struct Reply {
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    duration_seconds: Option<f64>,
    #[serde(default)]
    snapped_origin: Option<GeoPoint>,
}

/// Client for a directions service speaking the JSON contract
///
/// ```text
/// POST {origin: {lat, lon}, destination: {lat, lon}, mode, optimistic}
///  ->  {duration_seconds, status?, snapped_origin?: {lat, lon}}
/// ```
///
/// 404 or `status: "NOT_FOUND"` means no route. 429, 5xx and transport
/// failures are retried with exponential backoff.
pub struct ExternalDirections {
    endpoint: String,
    api_key: String,
    transport: Box<dyn Transport>,
    pub retry: RetryPolicy,
    pub max_reposition_m: f64,
    calls: AtomicUsize,
}

impl ExternalDirections {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, transport: Box<dyn Transport>) -> Self {
        ExternalDirections {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            transport,
            retry: RetryPolicy::default(),
            max_reposition_m: DEFAULT_MAX_REPOSITION_M,
            calls: AtomicUsize::new(0),
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, transport: Box<dyn Transport>) -> Result<Self, FreeFlowError> {
        match std::env::var(API_KEY_ENV) {
            Ok(k) if !k.trim().is_empty() => Ok(Self::new(endpoint, k, transport)),
            _ => Err(FreeFlowError::MissingCredentials),
        }
    }

    fn parse(&self, origin: GeoPoint, body: &str) -> Result<f64, FreeFlowError> {
        let reply: Reply = serde_json::from_str(body)
            .map_err(|e| FreeFlowError::InvalidResponse(format!("{e}: {body}")))?;
        if reply.status.as_deref() == Some("NOT_FOUND") {
            return Err(FreeFlowError::NotFound(format!("no route from {origin}")));
        }
        if let Some(snapped) = reply.snapped_origin {
            let d = geodesic_distance(origin, snapped);
            if d > self.max_reposition_m {
                return Err(FreeFlowError::RepositionedTooFar { distance_m: d });
            }
        }
        match reply.duration_seconds {
            Some(s) if s.is_finite() && s >= 0.0 => Ok(s.max(MIN_DURATION_S)),
            other => Err(FreeFlowError::InvalidResponse(format!(
                "bad duration_seconds {other:?}"
            ))),
        }
    }
}

impl FreeFlowProvider for ExternalDirections {
    fn query_route(
        &self,
        origin: GeoPoint,
        dest: GeoPoint,
        mode: Mode,
        optimistic: bool,
    ) -> Result<f64, FreeFlowError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let body = json!({
            "origin": {"lat": origin.lat, "lon": origin.lon},
            "destination": {"lat": dest.lat, "lon": dest.lon},
            "mode": mode.as_str(),
            "optimistic": optimistic,
        });
        let headers = [("Authorization".to_string(), format!("Bearer {}", self.api_key))];
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.transport.post_json(&self.endpoint, &headers, &body) {
                Ok(r) if r.status == 404 => {
                    return Err(FreeFlowError::NotFound(format!("{origin} -> {dest}")))
                }
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    last = format!("HTTP {}", r.status);
                }
                Ok(r) if (200..300).contains(&r.status) => return self.parse(origin, &r.body),
                Ok(r) => {
                    return Err(FreeFlowError::InvalidResponse(format!(
                        "HTTP {}: {}",
                        r.status, r.body
                    )))
                }
                Err(e) => last = e,
            }
            log::warn!("free-flow query attempt {} failed: {last}", attempt + 1);
        }
        Err(FreeFlowError::Unavailable {
            attempts,
            message: last,
        })
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::ExternalApi
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}
