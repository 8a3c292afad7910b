//! Traffic assignment: Frank-Wolfe on link costs, followed by a path-based
//! equilibration pass that drives every commodity's used paths to equal cost.
//!
//! The same machinery solves both problems. With link cost `ℓ_e` it finds
//! the Wardrop equilibrium (minimizer of the Beckmann potential); with the
//! marginal cost `ℓ_e + x·ℓ'_e` it finds the social optimum (minimizer of
//! `Σ x_e ℓ_e(x_e)`).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::Serialize;

use super::{DemandMatrix, FlowVector, RoadNetwork, SimError};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const MAX_PATHS_PER_COMMODITY: usize = 64;
const POLISH_ROUNDS: usize = 2_000;
const POLISH_TOL: f64 = 1e-12;
/// With path equilibration enabled, Frank-Wolfe only needs to find the
/// neighbourhood of the solution and a starting path set.
const WARM_START_GAP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    /// User equilibrium: edges priced at their latency.
    Latency,
    /// Social optimum: edges priced at their marginal social cost.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Exact line search on the objective along the Frank-Wolfe direction.
    LineSearch,
    /// The classic `2/(k+2)` schedule.
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssignmentParams {
    /// Relative gap the returned flow must reach.
    pub tol: f64,
    pub max_iter: usize,
    pub step: StepRule,
    /// Run the path-based equilibration pass after Frank-Wolfe.
    pub polish: bool,
}

impl Default for AssignmentParams {
    fn default() -> Self {
        AssignmentParams {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            step: StepRule::LineSearch,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFlow {
    /// Index into the demand matrix.
    pub commodity: usize,
    pub edges: Vec<usize>,
    pub nodes: Vec<usize>,
    pub flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub kind: CostKind,
    pub flow: FlowVector,
    pub paths: Vec<PathFlow>,
    /// Relative gap of the returned flow under the solved cost.
    pub gap: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out before `tol` was reached.
    pub converged: bool,
    /// Objective after every Frank-Wolfe step (Beckmann potential for the
    /// equilibrium, social cost for the optimum).
    pub objective_trace: Vec<f64>,
}

impl Assignment {
    pub fn social_cost(&self, net: &RoadNetwork) -> f64 {
        self.flow.social_cost(net)
    }

    pub fn paths_of(&self, commodity: usize) -> impl Iterator<Item = &PathFlow> {
        self.paths.iter().filter(move |p| p.commodity == commodity)
    }
}

fn edge_cost(net: &RoadNetwork, kind: CostKind, e: usize, x: f64) -> f64 {
    let l = &net.edges()[e].latency;
    match kind {
        CostKind::Latency => l.eval(x),
        CostKind::Marginal => l.marginal(x),
    }
}

fn edge_cost_derivative(net: &RoadNetwork, kind: CostKind, e: usize, x: f64) -> f64 {
    let l = &net.edges()[e].latency;
    match kind {
        CostKind::Latency => l.derivative(x),
        CostKind::Marginal => l.marginal_derivative(x),
    }
}

fn costs(net: &RoadNetwork, kind: CostKind, x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|e| edge_cost(net, kind, e, x[e])).collect()
}

fn objective(net: &RoadNetwork, kind: CostKind, x: &[f64]) -> f64 {
    let f = FlowVector { x: x.to_vec() };
    match kind {
        CostKind::Latency => f.beckmann(net),
        CostKind::Marginal => f.social_cost(net),
    }
}

/// Dijkstra from `origin` over edges with finite cost; `None` marks an
/// unusable edge. Returns distances and predecessor edges.
fn dijkstra(
    net: &RoadNetwork,
    origin: usize,
    cost: impl Fn(usize) -> Option<f64>,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = net.nodes().len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[origin] = 0.0;
    heap.push(Reverse((Ordered(0.0), origin)));
    while let Some(Reverse((Ordered(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &e in net.out_edges(u) {
            let Some(c) = cost(e) else { continue };
            let v = net.edges()[e].to;
            let nd = d + c;
            if nd < dist[v] {
                dist[v] = nd;
                pred[v] = Some(e);
                heap.push(Reverse((Ordered(nd), v)));
            }
        }
    }
    (dist, pred)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);
impl Eq for Ordered {}
impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn trace_back(net: &RoadNetwork, pred: &[Option<usize>], origin: usize, dest: usize) -> Vec<usize> {
    let mut edges = Vec::new();
    let mut v = dest;
    while v != origin {
        let e = pred[v].expect("reachable node has a predecessor");
        edges.push(e);
        v = net.edges()[e].from;
    }
    edges.reverse();
    edges
}

/// Cheapest path from `origin` to `dest` under `cost`, as `(cost, edges)`.
pub(crate) fn shortest_path(
    net: &RoadNetwork,
    origin: usize,
    dest: usize,
    cost: impl Fn(usize) -> Option<f64>,
) -> Option<(f64, Vec<usize>)> {
    let (dist, pred) = dijkstra(net, origin, cost);
    dist[dest]
        .is_finite()
        .then(|| (dist[dest], trace_back(net, &pred, origin, dest)))
}

/// Free-flow (zero-load) travel time between two nodes.
pub fn free_flow_time(net: &RoadNetwork, origin: usize, dest: usize) -> Option<f64> {
    shortest_path(net, origin, dest, |e| Some(net.edges()[e].latency.a)).map(|(c, _)| c)
}

fn path_nodes(net: &RoadNetwork, edges: &[usize]) -> Vec<usize> {
    let mut nodes = Vec::with_capacity(edges.len() + 1);
    if let Some(&first) = edges.first() {
        nodes.push(net.edges()[first].from);
    }
    nodes.extend(edges.iter().map(|&e| net.edges()[e].to));
    nodes
}

fn unreachable(net: &RoadNetwork, o: usize, d: usize) -> SimError {
    SimError::Unreachable {
        origin: net.node_id(o).to_string(),
        destination: net.node_id(d).to_string(),
    }
}

/// All-or-nothing loading of every commodity onto its cheapest path.
fn all_or_nothing(
    net: &RoadNetwork,
    demands: &DemandMatrix,
    active: &[usize],
    c: &[f64],
) -> Result<(Vec<Vec<f64>>, f64), SimError> {
    let results: Vec<Result<(Vec<f64>, f64), SimError>> = active
        .par_iter()
        .map(|&k| {
            let d = demands.demands[k];
            let (dist, edges) = shortest_path(net, d.origin, d.destination, |e| Some(c[e]))
                .ok_or_else(|| unreachable(net, d.origin, d.destination))?;
            let mut y = vec![0.0; c.len()];
            for e in edges {
                y[e] += d.rate;
            }
            Ok((y, d.rate * dist))
        })
        .collect();
    let mut ys = Vec::with_capacity(active.len());
    let mut sptt = 0.0;
    for r in results {
        let (y, s) = r?;
        ys.push(y);
        sptt += s;
    }
    Ok((ys, sptt))
}

fn relative_gap(x: &[f64], c: &[f64], sptt: f64) -> f64 {
    let tstt: f64 = x.iter().zip(c).map(|(x, c)| x * c).sum();
    if tstt > 0.0 {
        ((tstt - sptt) / tstt).max(0.0)
    } else {
        0.0
    }
}

/// Step length minimizing the objective along `x + α·d`, by bisection on
/// the directional derivative (non-decreasing since costs are).
fn line_search(net: &RoadNetwork, kind: CostKind, x: &[f64], d: &[f64]) -> f64 {
    let slope = |a: f64| -> f64 {
        (0..x.len())
            .filter(|&e| d[e] != 0.0)
            .map(|e| d[e] * edge_cost(net, kind, e, x[e] + a * d[e]))
            .sum()
    };
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn solve(
    net: &RoadNetwork,
    demands: &DemandMatrix,
    params: AssignmentParams,
    kind: CostKind,
) -> Result<Assignment, SimError> {
    if !(params.tol > 0.0) {
        return Err(SimError::InvalidTolerance(params.tol));
    }
    let m = net.edges().len();
    let active: Vec<usize> = (0..demands.demands.len())
        .filter(|&k| demands.demands[k].rate > 0.0)
        .collect();
    if active.is_empty() {
        return Ok(Assignment {
            kind,
            flow: FlowVector::zeros(m),
            paths: Vec::new(),
            gap: 0.0,
            iterations: 0,
            converged: true,
            objective_trace: vec![0.0],
        });
    }

    let (mut xk, _) = all_or_nothing(net, demands, &active, &costs(net, kind, &vec![0.0; m]))?;
    let total = |xk: &[Vec<f64>]| -> Vec<f64> {
        let mut x = vec![0.0; m];
        for y in xk {
            for e in 0..m {
                x[e] += y[e];
            }
        }
        x
    };
    let mut x = total(&xk);
    let mut trace = vec![objective(net, kind, &x)];
    let mut iterations = 0;
    let mut converged = false;
    let mut gap;
    let stop_at = if params.polish {
        params.tol.max(WARM_START_GAP)
    } else {
        params.tol
    };
    loop {
        let c = costs(net, kind, &x);
        let (yk, sptt) = all_or_nothing(net, demands, &active, &c)?;
        gap = relative_gap(&x, &c, sptt);
        if gap <= stop_at {
            converged = gap <= params.tol;
            break;
        }
        if iterations >= params.max_iter {
            break;
        }
        let y = total(&yk);
        let d: Vec<f64> = (0..m).map(|e| y[e] - x[e]).collect();
        let alpha = match params.step {
            StepRule::LineSearch => line_search(net, kind, &x, &d),
            StepRule::Harmonic => 2.0 / (iterations as f64 + 2.0),
        };
        for (xc, yc) in xk.iter_mut().zip(&yk) {
            for e in 0..m {
                xc[e] += alpha * (yc[e] - xc[e]);
            }
        }
        x = total(&xk);
        trace.push(objective(net, kind, &x));
        iterations += 1;
    }
    if !converged && !params.polish {
        log::warn!(
            "frank-wolfe stopped after {iterations} iterations at relative gap {gap:.3e} (tol {:.1e})",
            params.tol
        );
    }

    let mut paths = Vec::new();
    for (slot, &k) in active.iter().enumerate() {
        paths.push(decompose(net, demands, k, &xk[slot], kind, &x)?);
    }
    if params.polish {
        polish(net, demands, kind, &mut paths, &mut x);
    }
    let mut flat: Vec<PathFlow> = Vec::new();
    for (slot, &k) in active.iter().enumerate() {
        for (edges, flow) in std::mem::take(&mut paths[slot]) {
            if flow > 0.0 {
                flat.push(PathFlow {
                    commodity: k,
                    nodes: path_nodes(net, &edges),
                    edges,
                    flow,
                });
            }
        }
    }
    let mut x = vec![0.0; m];
    for p in &flat {
        for &e in &p.edges {
            x[e] += p.flow;
        }
    }
    let c = costs(net, kind, &x);
    let (_, sptt) = all_or_nothing(net, demands, &active, &c)?;
    let final_gap = relative_gap(&x, &c, sptt);
    let converged = converged || final_gap <= params.tol;
    if !converged {
        log::warn!("assignment stopped at relative gap {final_gap:.3e} (tol {:.1e})", params.tol);
    }
    Ok(Assignment {
        kind,
        flow: FlowVector { x },
        paths: flat,
        gap: final_gap,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Splits one commodity's edge flow into paths by repeatedly peeling the
/// cheapest path through edges still carrying flow.
fn decompose(
    net: &RoadNetwork,
    demands: &DemandMatrix,
    k: usize,
    xk: &[f64],
    kind: CostKind,
    x: &[f64],
) -> Result<Vec<(Vec<usize>, f64)>, SimError> {
    let d = demands.demands[k];
    let eps = 1e-12 * d.rate;
    let c = costs(net, kind, x);
    let mut rest = xk.to_vec();
    let mut out: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut routed = 0.0;
    while out.len() < MAX_PATHS_PER_COMMODITY && routed < d.rate * (1.0 - 1e-12) {
        let Some((_, edges)) = shortest_path(net, d.origin, d.destination, |e| {
            (rest[e] > eps).then_some(c[e])
        }) else {
            break;
        };
        let bottleneck = edges.iter().map(|&e| rest[e]).fold(f64::INFINITY, f64::min);
        for &e in &edges {
            rest[e] -= bottleneck;
        }
        routed += bottleneck;
        out.push((edges, bottleneck));
    }
    if out.is_empty() || !(routed > 0.0) {
        return Err(SimError::InfeasibleFlow {
            origin: net.node_id(d.origin).to_string(),
            destination: net.node_id(d.destination).to_string(),
        });
    }
    let scale = d.rate / routed;
    for p in &mut out {
        p.1 *= scale;
    }
    Ok(out)
}

/// Gauss-Seidel path equilibration: for each commodity, shift flow from
/// every costlier used path onto the current cheapest path by a Newton step
/// on their cost difference.
fn polish(
    net: &RoadNetwork,
    demands: &DemandMatrix,
    kind: CostKind,
    paths: &mut [Vec<(Vec<usize>, f64)>],
    x: &mut Vec<f64>,
) {
    // Rebuild x from the (rescaled) paths so both views agree.
    x.iter_mut().for_each(|v| *v = 0.0);
    for ps in paths.iter() {
        for (edges, f) in ps {
            for &e in edges {
                x[e] += f;
            }
        }
    }
    let active: Vec<usize> = (0..demands.demands.len())
        .filter(|&k| demands.demands[k].rate > 0.0)
        .collect();
    for _ in 0..POLISH_ROUNDS {
        let mut worst = 0.0f64;
        for (slot, &k) in active.iter().enumerate() {
            let d = demands.demands[k];
            let ps = &mut paths[slot];
            let c = costs(net, kind, x);
            let (_, sp) = shortest_path(net, d.origin, d.destination, |e| Some(c[e]))
                .expect("commodity was routable");
            let target = match ps.iter().position(|(e, _)| *e == sp) {
                Some(i) => i,
                None if ps.len() < MAX_PATHS_PER_COMMODITY => {
                    ps.push((sp, 0.0));
                    ps.len() - 1
                }
                None => {
                    let pc = |edges: &[usize]| edges.iter().map(|&e| c[e]).sum::<f64>();
                    (0..ps.len())
                        .min_by(|&a, &b| pc(&ps[a].0).total_cmp(&pc(&ps[b].0)))
                        .expect("non-empty path set")
                }
            };
            for p in 0..ps.len() {
                if p == target || ps[p].1 <= 0.0 {
                    continue;
                }
                let path_cost = |edges: &[usize], x: &[f64]| -> f64 {
                    edges.iter().map(|&e| edge_cost(net, kind, e, x[e])).sum()
                };
                let cp = path_cost(&ps[p].0, x);
                let ct = path_cost(&ps[target].0, x);
                let excess = cp - ct;
                if excess <= 0.0 {
                    continue;
                }
                worst = worst.max(excess / ct.abs().max(1.0));
                let deriv: f64 = ps[p]
                    .0
                    .iter()
                    .filter(|e| !ps[target].0.contains(e))
                    .chain(ps[target].0.iter().filter(|e| !ps[p].0.contains(e)))
                    .map(|&e| edge_cost_derivative(net, kind, e, x[e]))
                    .sum();
                let shift = if deriv > 0.0 {
                    (excess / deriv).min(ps[p].1)
                } else {
                    ps[p].1
                };
                let shift = if ps[p].1 - shift <= 1e-15 * d.rate { ps[p].1 } else { shift };
                ps[p].1 -= shift;
                ps[target].1 += shift;
                for &e in &ps[p].0 {
                    x[e] -= shift;
                }
                for &e in &ps[target].0 {
                    x[e] += shift;
                }
            }
            ps.retain(|(_, f)| *f > 0.0);
        }
        if worst <= POLISH_TOL {
            break;
        }
    }
}

/// Wardrop user equilibrium.
pub fn frank_wolfe_equilibrium(
    net: &RoadNetwork,
    demands: &DemandMatrix,
    params: AssignmentParams,
) -> Result<Assignment, SimError> {
    solve(net, demands, params, CostKind::Latency)
}

/// Flow minimizing the social cost `Σ x_e ℓ_e(x_e)`.
pub fn social_optimum(
    net: &RoadNetwork,
    demands: &DemandMatrix,
    params: AssignmentParams,
) -> Result<Assignment, SimError> {
    solve(net, demands, params, CostKind::Marginal)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoaResult {
    pub poa: f64,
    pub equilibrium_cost: f64,
    pub optimum_cost: f64,
    #[serde(skip)]
    pub equilibrium: Assignment,
    #[serde(skip)]
    pub optimum: Assignment,
}

/// `C(equilibrium) / C(optimum)`.
pub fn price_of_anarchy(
    net: &RoadNetwork,
    demands: &DemandMatrix,
    params: AssignmentParams,
) -> Result<PoaResult, SimError> {
    let equilibrium = frank_wolfe_equilibrium(net, demands, params)?;
    let optimum = social_optimum(net, demands, params)?;
    let equilibrium_cost = equilibrium.social_cost(net);
    let optimum_cost = optimum.social_cost(net);
    if !(optimum_cost > 0.0) {
        return Err(SimError::ZeroCostOptimum);
    }
    Ok(PoaResult {
        poa: equilibrium_cost / optimum_cost,
        equilibrium_cost,
        optimum_cost,
        equilibrium,
        optimum,
    })
}

/// Latency of every path in `assignment`, evaluated at its flow.
pub fn path_latencies(net: &RoadNetwork, assignment: &Assignment) -> Vec<f64> {
    let lat = assignment.flow.latencies(net);
    assignment
        .paths
        .iter()
        .map(|p| p.edges.iter().map(|&e| lat[e]).sum())
        .collect()
}

/// Largest amount by which a used path's cost exceeds the commodity's
/// cheapest path, under the assignment's own cost kind.
pub fn max_used_path_excess(net: &RoadNetwork, demands: &DemandMatrix, assignment: &Assignment) -> f64 {
    let c = costs(net, assignment.kind, &assignment.flow.x);
    assignment
        .paths
        .iter()
        .map(|p| {
            let d = demands.demands[p.commodity];
            let best = shortest_path(net, d.origin, d.destination, |e| Some(c[e]))
                .map(|(s, _)| s)
                .unwrap_or(f64::INFINITY);
            p.edges.iter().map(|&e| c[e]).sum::<f64>() - best
        })
        .fold(0.0, f64::max)
}
