use std::collections::BTreeMap;
use std::path::Path;

use routewild::clustering::ClusterMethod;
use routewild::pipeline::{
    run_analyze, run_sensitivity, run_simulate, AnalyzeConfig, ProviderChoice, SensitivityConfig,
    SimInstance, SimulateConfig, MANIFEST_FILE,
};
use routewild::simulator::builtin::Builtin;
use serde_json::Value;

fn simulate(b: Builtin, dir: &Path, agents: usize, sigma: f64, days: usize) -> routewild::pipeline::SimulateOutcome {
    let mut cfg = SimulateConfig::new(SimInstance::Builtin(b), dir);
    cfg.traces.n_agents = agents;
    cfg.traces.sigma_s = sigma;
    cfg.traces.days = days;
    cfg.traces.home_jitter_m = 0.0;
    cfg.traces.seed = 7;
    run_simulate(&cfg).unwrap()
}

fn analyze_cfg(sim: &Path, out: &Path) -> AnalyzeConfig {
    let mut cfg = AnalyzeConfig::new(sim.join("trips.jsonl"), sim.join("schools.csv"), out);
    cfg.freeflow.provider = ProviderChoice::Offline;
    cfg.freeflow.network = Some(sim.join("network.json"));
    cfg.ground_truth = Some(sim.join("ground_truth.json"));
    cfg
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn equilibrium_dataset_closes_the_loop() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let outcome = simulate(Builtin::Grid, &sim, 300, 0.0, 2);
    let out = run_analyze(&analyze_cfg(&sim, &dir.path().join("out"))).unwrap();
    assert!(out.regret_table.rows.iter().all(|r| r.regret == 0.0));
    let summary = out.regret_summary.unwrap();
    assert!(summary.epsilon.iter().all(|e| e.epsilon == 0.0));
    let soc = out.soc.unwrap();
    assert!((soc.soc_overall - outcome.traces.truth.soc).abs() < 1e-6);
    let report = read_json(&dir.path().join("out/soc_report.json"));
    assert_eq!(report["corollary"]["passes"], true);
    assert!(report["ground_truth"]["abs_diff"].as_f64().unwrap() < 1e-6);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(Builtin::Grid, &sim, 200, 20.0, 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_analyze(&analyze_cfg(&sim, &a)).unwrap();
    run_analyze(&analyze_cfg(&sim, &b)).unwrap();
    let files = |d: &Path| -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != MANIFEST_FILE)
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect()
    };
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() >= 9, "{:?}", fa.keys());
    assert_eq!(fa, fb);
}

#[test]
fn empty_trips_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let trips = dir.path().join("trips.jsonl");
    let schools = dir.path().join("schools.csv");
    std::fs::write(&trips, "").unwrap();
    std::fs::write(&schools, "school_id,lat,lon\n").unwrap();
    let out = dir.path().join("out");
    let err = run_analyze(&AnalyzeConfig::new(&trips, &schools, &out)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("empty dataset"));
    let manifest = read_json(&out.join(MANIFEST_FILE));
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["failure"]["stage"], "ingest");
}

#[test]
fn single_point_sweep_matches_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(Builtin::Grid, &sim, 200, 30.0, 2);
    let mut base = AnalyzeConfig::new(sim.join("trips.jsonl"), sim.join("schools.csv"), dir.path().join("a"));
    let analyzed = run_analyze(&base).unwrap();
    base.out_dir = dir.path().join("s");
    let points = run_sensitivity(&SensitivityConfig {
        base,
        r_list: vec![400.0],
        methods: vec![ClusterMethod::Ball],
    })
    .unwrap();
    assert_eq!(points[0].ccdf, analyzed.ccdf);
    assert_eq!(
        std::fs::read(dir.path().join("a/regret_ccdf.csv")).unwrap(),
        std::fs::read(dir.path().join("s/regret_ccdf_ball_400.csv")).unwrap()
    );
}

#[test]
fn soc_is_skipped_without_a_provider() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    simulate(Builtin::PigouLinear, &sim, 20, 0.0, 1);
    let out = dir.path().join("out");
    let r = run_analyze(&AnalyzeConfig::new(sim.join("trips.jsonl"), sim.join("schools.csv"), &out)).unwrap();
    assert!(r.soc.is_none());
    assert_eq!(read_json(&out.join("soc_report.json"))["status"], "skipped");
}

/// On the quartic instance SoC and PoA both rise while demand is below one
/// unit. Beyond it the constant edge caps the equilibrium cost, so SoC is
/// flat while PoA falls: the two never move in opposite directions here.
#[test]
fn quartic_soc_tracks_demand_only_below_saturation() {
    let run = |scale: f64| {
        let dir = tempfile::tempdir().unwrap();
        let sim = dir.path().join("sim");
        let mut cfg = SimulateConfig::new(SimInstance::Builtin(Builtin::PigouQuartic), &sim);
        cfg.demand_scale = scale;
        cfg.traces.n_agents = 50;
        let poa = run_simulate(&cfg).unwrap().poa.unwrap().poa;
        let soc = run_analyze(&analyze_cfg(&sim, &dir.path().join("out"))).unwrap().soc.unwrap().soc_overall;
        (soc, poa)
    };
    let (soc_half, poa_half) = run(0.5);
    let (soc_five, poa_five) = run(5.0);
    let (soc_fifty, poa_fifty) = run(50.0);
    assert!(soc_five > soc_half, "{soc_half} -> {soc_five}");
    assert!(poa_five > poa_half, "{poa_half} -> {poa_five}");
    assert_eq!(soc_fifty, soc_five);
    assert!(poa_fifty < poa_five, "{poa_five} -> {poa_fifty}");
}
