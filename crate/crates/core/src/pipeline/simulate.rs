use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;

use super::{pretty, Manifest, PipelineError, PipelineResult, Stage};
use crate::model::io::{write_schools_csv, write_trips_jsonl};
use crate::simulator::assignment::{
    frank_wolfe_equilibrium, price_of_anarchy, social_optimum, AssignmentParams, PoaResult,
};
use crate::simulator::builtin::Builtin;
use crate::simulator::traces::{generate_traces, TraceParams, TraceSet};
use crate::simulator::{DemandMatrix, RoadNetwork, SimError};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimInstance {
    Builtin(Builtin),
    Files { network: PathBuf, demands: PathBuf },
}

/// Which flow the commuters follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowChoice {
    #[default]
    Equilibrium,
    Optimum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateConfig {
    pub instance: SimInstance,
    pub flow: FlowChoice,
    pub demand_scale: f64,
    pub traces: TraceParams,
    pub tol: f64,
    pub max_iter: usize,
    pub out_dir: PathBuf,
}

impl SimulateConfig {
    pub fn new(instance: SimInstance, out_dir: impl Into<PathBuf>) -> Self {
        let a = AssignmentParams::default();
        SimulateConfig {
            instance,
            flow: FlowChoice::Equilibrium,
            demand_scale: 1.0,
            traces: TraceParams::default(),
            tol: a.tol,
            max_iter: a.max_iter,
            out_dir: out_dir.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub net: RoadNetwork,
    pub demands: DemandMatrix,
    pub poa: Option<PoaResult>,
    pub traces: TraceSet,
}

fn sim_err(e: SimError) -> PipelineError {
    match e {
        SimError::Io { .. } | SimError::Format { .. } => PipelineError::invalid(Stage::Config, e),
        SimError::InvalidTraceParams(_) | SimError::InsufficientAgents { .. } | SimError::InvalidTolerance(_) => {
            PipelineError::invalid(Stage::Config, e)
        }
        SimError::UnknownNode(_)
        | SimError::DuplicateNode(_)
        | SimError::InvalidEdge { .. }
        | SimError::InvalidDemand { .. }
        | SimError::Unreachable { .. } => PipelineError::invalid(Stage::Simulate, e),
        other => PipelineError::internal(Stage::Simulate, other),
    }
}

/// Solves the instance, samples commuters onto the chosen flow and writes
/// `trips.jsonl`, `schools.csv`, `network.json`, `demands.csv` and
/// `ground_truth.json`.
pub fn run_simulate(cfg: &SimulateConfig) -> PipelineResult<SimulateOutcome> {
    let mut m = Manifest::new("simulate", &cfg.out_dir, cfg);
    let result = simulate_inner(cfg, &mut m);
    m.finish(result)
}

fn simulate_inner(cfg: &SimulateConfig, m: &mut Manifest) -> PipelineResult<SimulateOutcome> {
    if !(cfg.demand_scale > 0.0 && cfg.demand_scale.is_finite()) {
        return Err(PipelineError::invalid(Stage::Config, format!("demand scale must be positive, got {}", cfg.demand_scale)));
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| PipelineError::invalid(Stage::Config, format!("{}: {e}", cfg.out_dir.display())))?;
    let (name, net, demands) = match &cfg.instance {
        SimInstance::Builtin(b) => {
            let inst = b.instance(cfg.traces.seed);
            (inst.name, inst.net, inst.demands)
        }
        SimInstance::Files { network, demands } => {
            m.input(network);
            m.input(demands);
            let net = RoadNetwork::from_json_file(network).map_err(sim_err)?;
            let d = DemandMatrix::from_csv_file(&net, demands).map_err(sim_err)?;
            let stem = network.file_stem().and_then(|s| s.to_str()).unwrap_or("network");
            (stem.to_string(), net, d)
        }
    };
    let demands = demands.scaled(cfg.demand_scale);
    let params = AssignmentParams {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..AssignmentParams::default()
    };
    let poa = match price_of_anarchy(&net, &demands, params) {
        Ok(p) => Some(p),
        Err(SimError::ZeroCostOptimum) => {
            log::warn!("optimum has zero cost; PoA undefined");
            None
        }
        Err(e) => return Err(sim_err(e)),
    };
    let assignment = match (&poa, cfg.flow) {
        (Some(p), FlowChoice::Equilibrium) => p.equilibrium.clone(),
        (Some(p), FlowChoice::Optimum) => p.optimum.clone(),
        (None, FlowChoice::Equilibrium) => frank_wolfe_equilibrium(&net, &demands, params).map_err(sim_err)?,
        (None, FlowChoice::Optimum) => social_optimum(&net, &demands, params).map_err(sim_err)?,
    };
    m.runtime(
        "assignment",
        json!({"gap": assignment.gap, "iterations": assignment.iterations, "converged": assignment.converged}),
    );
    if !assignment.converged {
        log::warn!("assignment stopped at gap {:.3e} before reaching {:.1e}", assignment.gap, cfg.tol);
    }
    let mut traces = generate_traces(&name, &net, &demands, &assignment, &cfg.traces).map_err(sim_err)?;
    if let Some(p) = &poa {
        traces.truth.poa = Some(p.poa);
        traces.truth.equilibrium_cost = Some(p.equilibrium_cost);
        traces.truth.optimum_cost = Some(p.optimum_cost);
    }

    let report_err = |e: &dyn std::fmt::Display| PipelineError::internal(Stage::Report, e.to_string());
    write_trips_jsonl(&m.out("trips.jsonl"), &traces.dataset.trips, Some(traces.header)).map_err(|e| report_err(&e))?;
    write_schools_csv(&m.out("schools.csv"), &traces.dataset.schools).map_err(|e| report_err(&e))?;
    std::fs::write(m.out("network.json"), net.to_json()).map_err(|e| report_err(&e))?;
    demands.write_csv(&net, &m.out("demands.csv")).map_err(|e| report_err(&e))?;
    std::fs::write(m.out("ground_truth.json"), pretty(&traces.truth)).map_err(|e| report_err(&e))?;
    for f in ["trips.jsonl", "schools.csv", "network.json", "demands.csv", "ground_truth.json"] {
        m.output(f);
    }
    Ok(SimulateOutcome {
        net,
        demands,
        poa,
        traces,
    })
}

impl Default for SimInstance {
    fn default() -> Self {
        SimInstance::Builtin(Builtin::PigouLinear)
    }
}

