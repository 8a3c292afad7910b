//! Request/response plumbing for [`ExternalDirections`](super::ExternalDirections).
//!
//! Every exchange is a JSON POST; the fixture and recording transports let
//! tests replay a provider without touching the network.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    /// `Err` is a transport-level failure (connection refused, timeout).
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<HttpResponse, String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<HttpResponse, String> {
        let mut req = self.client.post(url).json(body);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// One recorded request/response pair, a line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: Value,
    pub status: u16,
    pub body: String,
}

/// Coordinates are compared at 1e-7 degrees (about 1 cm) so replay does not
/// depend on the last bits of a float round trip.
fn match_key(request: &Value) -> String {
    fn norm(v: &Value) -> Value {
        match v {
            Value::Number(n) => match n.as_f64() {
                Some(f) if !n.is_i64() && !n.is_u64() => Value::String(format!("{f:.7}")),
                _ => v.clone(),
            },
            Value::Array(a) => Value::Array(a.iter().map(norm).collect()),
            Value::Object(o) => Value::Object(o.iter().map(|(k, v)| (k.clone(), norm(v))).collect()),
            _ => v.clone(),
        }
    }
    norm(request).to_string()
}

/// Replays recorded exchanges; unknown requests fail like a dead network.
pub struct FixtureTransport {
    exchanges: BTreeMap<String, Exchange>,
    calls: AtomicUsize,
}

impl FixtureTransport {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        FixtureTransport {
            exchanges: exchanges
                .into_iter()
                .map(|e| (match_key(&e.request), e))
                .collect(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self, String> {
        let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?,
            );
        }
        Ok(Self::new(out))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Transport for FixtureTransport {
    fn post_json(
        &self,
        _url: &str,
        _headers: &[(String, String)],
        body: &Value,
    ) -> Result<HttpResponse, String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.exchanges
            .get(&match_key(body))
            .map(|e| HttpResponse {
                status: e.status,
                body: e.body.clone(),
            })
            .ok_or_else(|| format!("no fixture for request {body}"))
    }
}

/// Forwards to an inner transport and keeps every successful exchange.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<Exchange>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("recording lock").clone()
    }

    pub fn save_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        for e in self.exchanges() {
            writeln!(f, "{}", serde_json::to_string(&e)?)?;
        }
        Ok(())
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<HttpResponse, String> {
        let resp = self.inner.post_json(url, headers, body)?;
        self.log.lock().expect("recording lock").push(Exchange {
            request: body.clone(),
            status: resp.status,
            body: resp.body.clone(),
        });
        Ok(resp)
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<HttpResponse, String> {
        (**self).post_json(url, headers, body)
    }
}
