//! Built-in instances with known equilibria.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Demand, DemandMatrix, Edge, Latency, Node, RoadNetwork};
use crate::geometry::{unproject, PlanarPoint};
use crate::model::GeoPoint;

/// Latency unit of the built-in Pigou and Braess instances when emitted as
/// traces: a latency of 1 is half an hour.
pub const TIME_SCALE_S: f64 = 1800.0;

const ANCHOR: GeoPoint = GeoPoint { lat: 1.30, lon: 103.80 };

fn node(id: &str, east_m: f64, north_m: f64) -> Node {
    Node {
        id: id.into(),
        loc: unproject(PlanarPoint { x: east_m, y: north_m }, ANCHOR),
    }
}

fn build(nodes: Vec<Node>, edges: &[(usize, usize, Latency)]) -> RoadNetwork {
    RoadNetwork::new(
        nodes,
        edges
            .iter()
            .map(|&(from, to, latency)| Edge { from, to, latency })
            .collect(),
    )
    .expect("built-in network is valid")
}

/// Two parallel links `s → t`: `ℓ₁ = scale`, `ℓ₂(x) = scale·x^p`.
pub fn pigou(p: u32, scale: f64) -> RoadNetwork {
    build(
        vec![node("s", 0.0, 0.0), node("t", 10_000.0, 0.0)],
        &[
            (0, 1, Latency::constant(scale)),
            (0, 1, Latency { a: 0.0, b: scale, p }),
        ],
    )
}

/// The classic Braess network: `s→a: x`, `s→b: 1`, `a→t: 1`, `b→t: x`
/// plus the free shortcut `a→b`.
pub fn braess(scale: f64) -> RoadNetwork {
    let x = Latency { a: 0.0, b: scale, p: 1 };
    build(
        vec![
            node("s", 0.0, 0.0),
            node("a", 5_000.0, 3_000.0),
            node("b", 5_000.0, -3_000.0),
            node("t", 10_000.0, 0.0),
        ],
        &[
            (0, 1, x),
            (0, 2, Latency::constant(scale)),
            (1, 3, Latency::constant(scale)),
            (2, 3, x),
            (1, 2, Latency::constant(0.0)),
        ],
    )
}

/// Parallel constant-latency links `s → t`.
pub fn constant_parallel(latencies: &[f64]) -> RoadNetwork {
    let edges: Vec<_> = latencies
        .iter()
        .map(|&a| (0, 1, Latency::constant(a)))
        .collect();
    build(vec![node("s", 0.0, 0.0), node("t", 5_000.0, 0.0)], &edges)
}

/// One uncongested edge `a → b` of the given length traversed at the given
/// speed, in seconds.
pub fn single_edge(length_km: f64, speed_kmh: f64) -> RoadNetwork {
    build(
        vec![node("a", 0.0, 0.0), node("b", length_km * 1000.0, 0.0)],
        &[(0, 1, Latency::constant(length_km / speed_kmh * 3600.0))],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub net: RoadNetwork,
    pub demands: DemandMatrix,
}

pub const GRID_ROWS: usize = 4;
pub const GRID_COLS: usize = 5;
pub const GRID_SPACING_M: f64 = 1_500.0;
const GRID_COMMODITIES: usize = 6;

/// A 4×5 street grid with two-way BPR links (`t₀·(1 + 0.15·(x/c)⁴)`, free
/// speeds 30–50 km/h, capacities 1–2 flow units) and six random
/// origin-destination pairs at least three blocks apart.
pub fn random_grid(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = |r: usize, c: usize| r * GRID_COLS + c;
    let nodes: Vec<Node> = (0..GRID_ROWS)
        .flat_map(|r| (0..GRID_COLS).map(move |c| (r, c)))
        .map(|(r, c)| {
            node(
                &format!("n{r}{c}"),
                c as f64 * GRID_SPACING_M,
                r as f64 * GRID_SPACING_M,
            )
        })
        .collect();
    let mut edges = Vec::new();
    let mut link = |rng: &mut ChaCha8Rng, u: usize, v: usize| {
        for (from, to) in [(u, v), (v, u)] {
            let speed_kmh: f64 = rng.random_range(30.0..50.0);
            let cap: f64 = rng.random_range(1.0..2.0);
            let t0 = GRID_SPACING_M / (speed_kmh / 3.6);
            edges.push((
                from,
                to,
                Latency {
                    a: t0,
                    b: 0.15 * t0 / cap.powi(4),
                    p: 4,
                },
            ));
        }
    };
    for r in 0..GRID_ROWS {
        for c in 0..GRID_COLS {
            if c + 1 < GRID_COLS {
                link(&mut rng, id(r, c), id(r, c + 1));
            }
            if r + 1 < GRID_ROWS {
                link(&mut rng, id(r, c), id(r + 1, c));
            }
        }
    }
    let net = build(nodes, &edges);
    let n = GRID_ROWS * GRID_COLS;
    let mut demands: Vec<Demand> = Vec::new();
    while demands.len() < GRID_COMMODITIES {
        let o = rng.random_range(0..n);
        let d = rng.random_range(0..n);
        let blocks = (o / GRID_COLS).abs_diff(d / GRID_COLS) + (o % GRID_COLS).abs_diff(d % GRID_COLS);
        if blocks < 3 || demands.iter().any(|x| x.origin == o && x.destination == d) {
            continue;
        }
        demands.push(Demand {
            origin: o,
            destination: d,
            rate: rng.random_range(0.8..1.6),
        });
    }
    let demands = DemandMatrix::new(&net, demands).expect("grid demands are valid");
    Instance {
        name: format!("grid-{seed}"),
        net,
        demands,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    PigouLinear,
    PigouQuartic,
    Braess,
    Grid,
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Builtin::PigouLinear => "pigou-linear",
            Builtin::PigouQuartic => "pigou-quartic",
            Builtin::Braess => "braess",
            Builtin::Grid => "grid",
        })
    }
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [
        Builtin::PigouLinear,
        Builtin::PigouQuartic,
        Builtin::Braess,
        Builtin::Grid,
    ];

    /// The instance at unit demand, latencies in seconds.
    pub fn instance(self, seed: u64) -> Instance {
        let single = |name: &str, net: RoadNetwork| {
            let demands = DemandMatrix::single(&net, "s", "t", 1.0).expect("s and t exist");
            Instance {
                name: name.into(),
                net,
                demands,
            }
        };
        match self {
            Builtin::PigouLinear => single("pigou-linear", pigou(1, TIME_SCALE_S)),
            Builtin::PigouQuartic => single("pigou-quartic", pigou(4, TIME_SCALE_S)),
            Builtin::Braess => single("braess", braess(TIME_SCALE_S)),
            Builtin::Grid => random_grid(seed),
        }
    }
}
