use std::collections::BTreeMap;

use sonoswarm_core::harness::{run_scenario_to_dir, run_seed, MetricsReport, ScenarioId, ScenarioSpec, Trace};

#[test]
fn metrics_match_success_recomputed_from_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    for id in [ScenarioId::Sequential, ScenarioId::Parallel, ScenarioId::Synchronous] {
        let mut spec = ScenarioSpec::preset(id, (0..20).collect());
        spec.config.faults.drop_prob = 0.25;
        spec.config.faults.latency_jitter = 0.25;
        let out = dir.path().join(id.as_str());
        run_scenario_to_dir(&spec, &out).unwrap();

        let metrics: MetricsReport = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
        let mut tally: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for seed in &spec.seeds {
            let text = std::fs::read_to_string(out.join(format!("trace_{}_{seed}.jsonl", id.as_str()))).unwrap();
            for (mode, ok) in Trace::from_jsonl(&text).unwrap().plan_successes() {
                let e = tally.entry(mode).or_default();
                e.0 += 1;
                e.1 += u64::from(ok);
            }
        }
        assert_eq!(tally.len(), metrics.modes.len());
        for (mode, (plans, done)) in tally {
            let m = &metrics.modes[&mode];
            assert_eq!((m.plans, m.successes), (plans, done), "{id:?} {mode}");
            assert_eq!(m.success_rate, 100.0 * done as f64 / plans as f64);
        }
    }
}

#[test]
fn message_logs_are_written_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec::preset(ScenarioId::Parallel, vec![5, 6]);
    run_scenario_to_dir(&spec, dir.path()).unwrap();
    for seed in [5, 6] {
        let log = std::fs::read_to_string(dir.path().join(format!("messages_parallel_{seed}.jsonl"))).unwrap();
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        assert_eq!(first["payload"]["type"], "ASSIGN");
    }
}

#[test]
fn global_timeout_marks_the_run_failed() {
    let mut spec = ScenarioSpec::preset(ScenarioId::Sequential, vec![1]);
    spec.config.sim.max_time = 5.0;
    let (outcome, world) = run_seed(&spec, 1).unwrap();
    assert!(outcome.timed_out);
    assert!(!outcome.success);
    assert!(world.now() <= 5.0 + 1e-9);

    let report = MetricsReport::aggregate("timeout", vec![outcome]);
    assert_eq!(report.success_rate(), 0.0);
}
