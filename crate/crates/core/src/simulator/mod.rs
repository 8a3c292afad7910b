//! Nonatomic routing games with polynomial latencies: user equilibrium and
//! social optimum by Frank-Wolfe, exact Price of Anarchy, and synthetic trip
//! traces with known ground truth.

pub mod assignment;
pub mod builtin;
pub mod traces;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::GeoPoint;

pub use assignment::{
    frank_wolfe_equilibrium, price_of_anarchy, social_optimum, Assignment, AssignmentParams,
    CostKind, PathFlow, StepRule,
};
pub use traces::{generate_traces, GroundTruth, TraceParams, TraceSet};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("invalid edge {from}->{to}: {reason}")]
    InvalidEdge {
        from: String,
        to: String,
        reason: String,
    },
    #[error("invalid demand {origin}->{destination}: {reason}")]
    InvalidDemand {
        origin: String,
        destination: String,
        reason: String,
    },
    #[error("no path from {origin} to {destination}")]
    Unreachable { origin: String, destination: String },
    #[error("tolerance must be > 0, got {0}")]
    InvalidTolerance(f64),
    #[error("degenerate zero-cost optimum")]
    ZeroCostOptimum,
    #[error("n_agents {n_agents} cannot cover {commodities} commodities")]
    InsufficientAgents { n_agents: usize, commodities: usize },
    #[error("flow does not route the demand of {origin}->{destination}")]
    InfeasibleFlow { origin: String, destination: String },
    #[error("invalid trace parameter: {0}")]
    InvalidTraceParams(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Edge latency `a + b·x^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub a: f64,
    pub b: f64,
    pub p: u32,
}

impl Latency {
    pub fn constant(a: f64) -> Self {
        Latency { a, b: 0.0, p: 1 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.a + self.b * x.powi(self.p as i32)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        if self.b == 0.0 {
            0.0
        } else {
            self.b * self.p as f64 * x.powi(self.p as i32 - 1)
        }
    }

    /// Marginal social cost `d/dx [x·ℓ(x)] = a + (p+1)·b·x^p`.
    pub fn marginal(&self, x: f64) -> f64 {
        self.a + (self.p as f64 + 1.0) * self.b * x.powi(self.p as i32)
    }

    pub fn marginal_derivative(&self, x: f64) -> f64 {
        (self.p as f64 + 1.0) * self.derivative(x)
    }

    /// `∫₀ˣ ℓ(s) ds`, the edge's share of the Beckmann potential.
    pub fn integral(&self, x: f64) -> f64 {
        self.a * x + self.b * x.powi(self.p as i32 + 1) / (self.p as f64 + 1.0)
    }

    fn validate(&self) -> Result<(), String> {
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(format!("a must be finite and >= 0, got {}", self.a));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(format!("b must be finite and >= 0, got {}", self.b));
        }
        if self.p < 1 {
            return Err(format!("p must be >= 1, got {}", self.p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub loc: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub latency: Latency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    index: BTreeMap<String, usize>,
    out: Vec<Vec<usize>>,
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, SimError> {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(SimError::DuplicateNode(n.id.clone()));
            }
        }
        let mut out = vec![Vec::new(); nodes.len()];
        for (ei, e) in edges.iter().enumerate() {
            let name = |i: usize| nodes.get(i).map(|n| n.id.clone()).unwrap_or_else(|| i.to_string());
            if e.from >= nodes.len() || e.to >= nodes.len() {
                return Err(SimError::InvalidEdge {
                    from: name(e.from),
                    to: name(e.to),
                    reason: "endpoint out of range".into(),
                });
            }
            if e.from == e.to {
                return Err(SimError::InvalidEdge {
                    from: name(e.from),
                    to: name(e.to),
                    reason: "self loop".into(),
                });
            }
            e.latency.validate().map_err(|reason| SimError::InvalidEdge {
                from: name(e.from),
                to: name(e.to),
                reason,
            })?;
            out[e.from].push(ei);
        }
        Ok(RoadNetwork {
            nodes,
            edges,
            index,
            out,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out[node]
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.nodes[node].id
    }

    /// Reads `network.json`: `{nodes: [{id, lat, lon}], edges: [{from, to, a, b, p}]}`.
    /// Node ids may be strings or integers.
    pub fn from_json_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text).map_err(|e| match e {
            SimError::Format { message, .. } => SimError::Format {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let bad = |message: String| SimError::Format {
            path: PathBuf::from("network.json"),
            message,
        };
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for n in file.nodes {
            let loc = GeoPoint::new(n.lat, n.lon).map_err(|e| bad(format!("node {}: {e}", id_string(&n.id))))?;
            nodes.push(Node {
                id: id_string(&n.id),
                loc,
            });
        }
        let index: BTreeMap<String, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        let mut edges = Vec::with_capacity(file.edges.len());
        for e in file.edges {
            let (from, to) = (id_string(&e.from), id_string(&e.to));
            let fi = *index.get(&from).ok_or(SimError::UnknownNode(from.clone()))?;
            let ti = *index.get(&to).ok_or(SimError::UnknownNode(to.clone()))?;
            edges.push(Edge {
                from: fi,
                to: ti,
                latency: Latency {
                    a: e.a,
                    b: e.b,
                    p: e.p,
                },
            });
        }
        RoadNetwork::new(nodes, edges)
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRow {
                    id: Value::String(n.id.clone()),
                    lat: n.loc.lat,
                    lon: n.loc.lon,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRow {
                    from: Value::String(self.nodes[e.from].id.clone()),
                    to: Value::String(self.nodes[e.to].id.clone()),
                    a: e.latency.a,
                    b: e.latency.b,
                    p: e.latency.p,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    nodes: Vec<NodeRow>,
    edges: Vec<EdgeRow>,
}

#[derive(Serialize, Deserialize)]
struct NodeRow {
    id: Value,
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    from: Value,
    to: Value,
    a: f64,
    b: f64,
    p: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demand {
    pub origin: usize,
    pub destination: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemandMatrix {
    pub demands: Vec<Demand>,
}

impl DemandMatrix {
    pub fn new(net: &RoadNetwork, demands: Vec<Demand>) -> Result<Self, SimError> {
        for d in &demands {
            let name = |i: usize| {
                net.nodes
                    .get(i)
                    .map(|n| n.id.clone())
                    .unwrap_or_else(|| i.to_string())
            };
            let fail = |reason: &str| SimError::InvalidDemand {
                origin: name(d.origin),
                destination: name(d.destination),
                reason: reason.into(),
            };
            if d.origin >= net.nodes.len() || d.destination >= net.nodes.len() {
                return Err(fail("endpoint out of range"));
            }
            if d.origin == d.destination {
                return Err(fail("origin equals destination"));
            }
            if !(d.rate >= 0.0 && d.rate.is_finite()) {
                return Err(fail("rate must be finite and >= 0"));
            }
        }
        Ok(DemandMatrix { demands })
    }

    /// Single commodity between two node ids.
    pub fn single(net: &RoadNetwork, origin: &str, destination: &str, rate: f64) -> Result<Self, SimError> {
        let o = net.node_index(origin).ok_or_else(|| SimError::UnknownNode(origin.into()))?;
        let d = net
            .node_index(destination)
            .ok_or_else(|| SimError::UnknownNode(destination.into()))?;
        DemandMatrix::new(
            net,
            vec![Demand {
                origin: o,
                destination: d,
                rate,
            }],
        )
    }

    pub fn total(&self) -> f64 {
        self.demands.iter().map(|d| d.rate).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DemandMatrix {
            demands: self
                .demands
                .iter()
                .map(|d| Demand {
                    rate: d.rate * factor,
                    ..*d
                })
                .collect(),
        }
    }

    /// Reads `demands.csv` with header `origin,destination,rate`.
    pub fn from_csv_file(net: &RoadNetwork, path: &Path) -> Result<Self, SimError> {
        let fmt = |message: String| SimError::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
        let headers = reader.headers().map_err(|e| fmt(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["origin", "destination", "rate"] {
            return Err(fmt("expected header `origin,destination,rate`".into()));
        }
        let mut demands = Vec::new();
        for (i, row) in reader.deserialize::<DemandRow>().enumerate() {
            let row = row.map_err(|e| fmt(format!("row {}: {e}", i + 2)))?;
            let o = net
                .node_index(&row.origin)
                .ok_or_else(|| SimError::UnknownNode(row.origin.clone()))?;
            let d = net
                .node_index(&row.destination)
                .ok_or_else(|| SimError::UnknownNode(row.destination.clone()))?;
            if !(row.rate > 0.0) {
                return Err(fmt(format!("row {}: rate must be > 0", i + 2)));
            }
            demands.push(Demand {
                origin: o,
                destination: d,
                rate: row.rate,
            });
        }
        DemandMatrix::new(net, demands)
    }

    pub fn write_csv(&self, net: &RoadNetwork, path: &Path) -> Result<(), SimError> {
        let fmt = |e: csv::Error| SimError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(fmt)?;
        for d in &self.demands {
            w.serialize(DemandRow {
                origin: net.node_id(d.origin).to_string(),
                destination: net.node_id(d.destination).to_string(),
                rate: d.rate,
            })
            .map_err(fmt)?;
        }
        w.flush().map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DemandRow {
    origin: String,
    destination: String,
    rate: f64,
}

/// Per-edge flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowVector {
    pub x: Vec<f64>,
}

impl FlowVector {
    pub fn zeros(n: usize) -> Self {
        FlowVector { x: vec![0.0; n] }
    }

    /// `C(x) = Σ x_e·ℓ_e(x_e)`.
    pub fn social_cost(&self, net: &RoadNetwork) -> f64 {
        self.x
            .iter()
            .zip(net.edges())
            .map(|(x, e)| x * e.latency.eval(*x))
            .sum()
    }

    /// Beckmann potential `Σ ∫₀^{x_e} ℓ_e`.
    pub fn beckmann(&self, net: &RoadNetwork) -> f64 {
        self.x
            .iter()
            .zip(net.edges())
            .map(|(x, e)| e.latency.integral(*x))
            .sum()
    }

    pub fn latencies(&self, net: &RoadNetwork) -> Vec<f64> {
        self.x
            .iter()
            .zip(net.edges())
            .map(|(x, e)| e.latency.eval(*x))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_calculus() {
        let l = Latency { a: 2.0, b: 3.0, p: 4 };
        assert_eq!(l.eval(2.0), 2.0 + 48.0);
        assert_eq!(l.derivative(2.0), 3.0 * 4.0 * 8.0);
        assert_eq!(l.marginal(2.0), 2.0 + 5.0 * 48.0);
        // ∫₀² 2 + 3s⁴ ds = 4 + 3·32/5
        assert!((l.integral(2.0) - (4.0 + 96.0 / 5.0)).abs() < 1e-12);
        let c = Latency::constant(7.0);
        assert_eq!(c.derivative(0.0), 0.0);
        assert_eq!(c.marginal(3.0), 7.0);
    }

    #[test]
    fn network_json_round_trip_with_numeric_ids() {
        let text = r#"{"nodes":[{"id":1,"lat":1.3,"lon":103.8},{"id":"b","lat":1.31,"lon":103.8}],
                       "edges":[{"from":1,"to":"b","a":1.0,"b":0.5,"p":4}]}"#;
        let net = RoadNetwork::from_json_str(text).unwrap();
        assert_eq!(net.node_index("1"), Some(0));
        assert_eq!(net.edges()[0].latency.p, 4);
        let again = RoadNetwork::from_json_str(&net.to_json()).unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn rejects_bad_networks() {
        let unknown = r#"{"nodes":[{"id":"a","lat":0,"lon":0}],"edges":[{"from":"a","to":"z","a":1,"b":0,"p":1}]}"#;
        assert!(matches!(RoadNetwork::from_json_str(unknown), Err(SimError::UnknownNode(n)) if n == "z"));
        let negative = r#"{"nodes":[{"id":"a","lat":0,"lon":0},{"id":"b","lat":0,"lon":0.1}],
                           "edges":[{"from":"a","to":"b","a":-1,"b":0,"p":1}]}"#;
        assert!(matches!(RoadNetwork::from_json_str(negative), Err(SimError::InvalidEdge { .. })));
    }

    #[test]
    fn demands_csv_round_trip() {
        let net = builtin::pigou(1, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demands.csv");
        let d = DemandMatrix::single(&net, "s", "t", 2.5).unwrap();
        d.write_csv(&net, &path).unwrap();
        assert_eq!(DemandMatrix::from_csv_file(&net, &path).unwrap(), d);
    }
}
