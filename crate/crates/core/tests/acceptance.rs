//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any of them fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use sonoswarm_core::acoustics::{
    coherent_sum, facing_pair, focus_phases, half_wavelength, line_scan, pressure_at, standing_wave_nodes, NodeSearch,
    PhasedArray, Point3, DEFAULT_FREQUENCY, DEFAULT_SPEED_OF_SOUND,
};
use sonoswarm_core::harness::{run_scenario, run_scenario_to_dir, run_seed, ScenarioId, ScenarioSpec, SimConfig, Trace};
use sonoswarm_core::nl_parse::{parse_command, ParseError, ReferenceBackend};
use sonoswarm_core::task_model::{coordination_mode, ActionType, CoordinationMode};

type Verdict = Result<String, String>;

const SAFETY_RADIUS: f64 = 0.15;
const CLOCK_SKEW_BOUND: f64 = 0.05;
const FLOAT_SLACK: f64 = 1e-9;

fn corpus_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str)
}

fn f64_field(v: &Value, key: &str) -> Option<f64> {
    v.get(key).and_then(Value::as_f64)
}

/// Plan success recomputed from the trace must agree with the run record.
fn check_recomputed(seed: u64, trace: &Trace, reported: &[bool]) -> Result<(), String> {
    let recomputed: Vec<bool> = trace.plan_successes().into_iter().map(|(_, ok)| ok).collect();
    if recomputed != reported {
        return Err(format!("seed {seed}: trace says {recomputed:?}, metrics say {reported:?}"));
    }
    Ok(())
}

fn criterion_1() -> Verdict {
    let t0 = Instant::now();
    let spec = ScenarioSpec::preset(ScenarioId::Sequential, seeds(50));
    let mut ok = 0;
    for &seed in &spec.seeds {
        let (outcome, world) = run_seed(&spec, seed).map_err(|e| e.to_string())?;
        if !outcome.success {
            return Err(format!("seed {seed} failed: {:?}", outcome.commands));
        }
        let trace = world.trace();
        let reported: Vec<bool> = outcome.commands.iter().filter(|c| c.parsed).map(|c| c.success()).collect();
        check_recomputed(seed, trace, &reported)?;
        match (trace.delivery_time("A"), trace.delivery_time("B")) {
            (Some(a), Some(b)) if a < b => ok += 1,
            other => return Err(format!("seed {seed}: deliveries A/B at {other:?}")),
        }
    }
    let elapsed = t0.elapsed();
    if elapsed >= Duration::from_secs(30) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("{ok}/50 succeeded with A before B in {:.2}s", elapsed.as_secs_f64()))
}

fn criterion_2() -> Verdict {
    let t0 = Instant::now();
    let mut rates = BTreeMap::new();
    for id in [ScenarioId::Sequential, ScenarioId::Parallel, ScenarioId::Synchronous] {
        let mut spec = ScenarioSpec::preset(id, seeds(100));
        spec.config.faults.drop_prob = 0.03;
        spec.config.faults.latency_jitter = 0.2;
        spec.config.faults.mocap_sigma_pos = 0.001;
        let report = run_scenario(&spec).map_err(|e| e.to_string())?;
        rates.insert(id.as_str(), report.success_rate());
    }
    let elapsed = t0.elapsed();
    let (seq, par, sync) = (rates["sequential"], rates["parallel"], rates["synchronous"]);
    let detail = format!(
        "seq {seq:.1}% >= par {par:.1}% >= sync {sync:.1}% in {:.2}s",
        elapsed.as_secs_f64()
    );
    if seq >= par && par >= sync && elapsed < Duration::from_secs(180) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// When one side of a synchronized transport stops abnormally, the other
/// must have ended its synchronized motion within one watchdog window.
fn sync_violation(trace: &Trace, window: f64) -> Option<String> {
    let mut moving: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let mut stopped: BTreeMap<&str, f64> = BTreeMap::new();
    let end = trace.records.last().map_or(0.0, |r| r.t());
    for e in trace.events() {
        match e.kind {
            "sync_motion_start" => {
                moving.entry(e.agent).or_insert((e.t, f64::INFINITY));
            }
            "sync_motion_end" | "task_done" | "task_failed" | "task_aborted" => {
                if let Some(m) = moving.get_mut(e.agent) {
                    m.1 = m.1.min(e.t);
                }
                if e.kind != "sync_motion_end" && e.kind != "task_done" {
                    stopped.entry(e.agent).or_insert(e.t);
                }
            }
            _ => {}
        }
    }
    for (initiator, &t_abort) in &stopped {
        for (robot, &(start, stop)) in &moving {
            if robot == initiator {
                continue;
            }
            let stop = if stop.is_finite() { stop } else { end };
            if stop > t_abort + window + FLOAT_SLACK && start <= stop {
                return Some(format!(
                    "{robot} moved until {stop:.3} after {initiator} stopped at {t_abort:.3}"
                ));
            }
        }
    }
    None
}

/// ASSIGN, its ACK and START per scheduler session in a lossless run.
fn handshake_counts(world: &sonoswarm_core::harness::World) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for env in world.bus().log() {
        let p = &env.payload;
        let (Some(kind), Some(session)) = (str_field(p, "type"), str_field(p, "session_id")) else {
            continue;
        };
        let acked = p.get("body").and_then(|b| str_field(b, "ack"));
        let counted = match kind {
            "ASSIGN" | "START" => env.sender == "scheduler" || env.recipient == "scheduler",
            "ACK" => acked == Some("ASSIGN"),
            _ => false,
        };
        if counted {
            *counts.entry(session.to_string()).or_default() += 1;
        }
    }
    counts
}

fn criterion_3() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let base = ScenarioSpec::preset(ScenarioId::Synchronous, vec![0]);
    let window = base.config.coordination.protocol.watchdog_window;
    let mut failures = 0;
    for seed in 0..10_000u64 {
        let mut spec = base.clone().with_seeds(vec![seed]);
        spec.config.faults.drop_prob = rng.random_range(0.0..=0.3);
        spec.config.faults.latency_jitter = rng.random_range(0.0..=0.3);
        let (outcome, world) = run_seed(&spec, seed).map_err(|e| e.to_string())?;
        failures += usize::from(!outcome.success);
        if let Some(v) = sync_violation(world.trace(), window) {
            return Err(format!("trial {seed}: {v}"));
        }
    }

    let mut sessions = 0;
    for id in [ScenarioId::Sequential, ScenarioId::Parallel, ScenarioId::Synchronous] {
        let mut spec = ScenarioSpec::preset(id, seeds(5));
        spec.config.faults.drop_prob = 0.0;
        spec.config.faults.latency_jitter = 0.0;
        for &seed in &spec.seeds {
            let (_, world) = run_seed(&spec, seed).map_err(|e| e.to_string())?;
            for (session, n) in handshake_counts(&world) {
                if n != 3 {
                    return Err(format!("{id:?} seed {seed}: session {session} used {n} handshake messages"));
                }
                sessions += 1;
            }
        }
    }
    Ok(format!(
        "0 violations in 10000 lossy trials ({failures} failed runs); {sessions} lossless handshakes took 3 messages; {:.1}s",
        t0.elapsed().as_secs_f64()
    ))
}

fn criterion_4() -> Verdict {
    let mut spec = ScenarioSpec::preset(ScenarioId::Synchronous, seeds(200));
    spec.config.faults.clock_offset_max = CLOCK_SKEW_BOUND;
    let mut worst_skew: f64 = 0.0;
    for &seed in &spec.seeds {
        let (outcome, world) = run_seed(&spec, seed).map_err(|e| e.to_string())?;
        if !outcome.success {
            return Err(format!("seed {seed} failed"));
        }
        let trace = world.trace();
        let mut bits = BTreeSet::new();
        for kind in ["barrier_start", "barrier_start_received", "sync_motion_start"] {
            for e in trace.events_of(kind) {
                let st = f64_field(e.data, "start_time").ok_or("event without start_time")?;
                bits.insert(st.to_bits());
            }
        }
        if bits.len() != 1 {
            return Err(format!("seed {seed}: {} distinct start times", bits.len()));
        }
        let starts: Vec<_> = trace.events_of("sync_motion_start").collect();
        if starts.len() != 2 {
            return Err(format!("seed {seed}: {} robots began synchronized motion", starts.len()));
        }
        for e in &starts {
            let local = f64_field(e.data, "local").unwrap_or(f64::NAN);
            let st = f64_field(e.data, "start_time").unwrap_or(f64::NAN);
            if (local - st).abs() > FLOAT_SLACK {
                return Err(format!("seed {seed}: {} began at local {local}, start_time {st}", e.agent));
            }
        }
        let ts: Vec<f64> = starts.iter().map(|e| e.t).collect();
        let skew = ts.iter().cloned().fold(f64::MIN, f64::max) - ts.iter().cloned().fold(f64::MAX, f64::min);
        worst_skew = worst_skew.max(skew);
    }
    let detail = format!("identical start_time in 200 runs, worst skew {:.4}s", worst_skew);
    if worst_skew <= CLOCK_SKEW_BOUND + FLOAT_SLACK {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5() -> Verdict {
    let focal = Point3::new(0.01, -0.005, 0.08);
    let mut array = PhasedArray::standard(Point3::zeros(), Point3::z());
    array.set_phases(&focus_phases(&array, focal));
    let expected = coherent_sum(&array, focal);
    let got = pressure_at(std::slice::from_ref(&array), focal).map_err(|e| e.to_string())?.magnitude;
    let focus_err = (got - expected).abs() / expected;
    if focus_err > 1e-9 {
        return Err(format!("focal magnitude off by {focus_err:e}"));
    }

    let mut shifted = array.clone();
    let phases: Vec<f64> = array.phases().iter().map(|p| p + 1.234).collect();
    shifted.set_phases(&phases);
    let mut phase_err: f64 = 0.0;
    for p in [focal, Point3::new(0.03, 0.02, 0.05), Point3::new(-0.04, 0.0, 0.12)] {
        let a = pressure_at(std::slice::from_ref(&array), p).map_err(|e| e.to_string())?.magnitude;
        let b = pressure_at(std::slice::from_ref(&shifted), p).map_err(|e| e.to_string())?.magnitude;
        phase_err = phase_err.max((a - b).abs() / a);
    }
    if phase_err > 1e-12 {
        return Err(format!("global phase changed |P| by {phase_err:e}"));
    }

    let half = half_wavelength(DEFAULT_FREQUENCY, DEFAULT_SPEED_OF_SOUND);
    let (a, b) = facing_pair(Point3::zeros(), 4.0);
    let span = Point3::new(4.0 * half, 0.0, 0.0);
    let nodes = standing_wave_nodes(&a, &b, -span, span, NodeSearch::default()).map_err(|e| e.to_string())?;
    let spacing_err = nodes.windows(2).map(|w| (w[1] - w[0] - half).abs()).fold(0.0, f64::max);
    if nodes.len() < 5 || spacing_err > 1e-6 {
        return Err(format!("{} nodes, spacing error {spacing_err:e} m", nodes.len()));
    }

    let scan = line_scan(
        std::slice::from_ref(&PhasedArray::standard(Point3::zeros(), Point3::z())),
        Point3::new(-0.05, 0.0, 0.05),
        Point3::new(0.05, 0.0, 0.05),
        201,
    )
    .map_err(|e| e.to_string())?;
    let palindrome_err = (0..scan.len())
        .map(|i| (scan[i].magnitude - scan[scan.len() - 1 - i].magnitude).abs() / scan[i].magnitude.max(1.0))
        .fold(0.0, f64::max);
    if palindrome_err > 1e-9 {
        return Err(format!("scan asymmetry {palindrome_err:e}"));
    }
    Ok(format!(
        "focus {focus_err:.1e}, phase {phase_err:.1e}, node spacing {:.7} mm (err {spacing_err:.1e} m), palindrome {palindrome_err:.1e}",
        half * 1e3
    ))
}

fn criterion_6() -> Verdict {
    let cfg = SimConfig::default();
    let poses = cfg.arena.robots.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let ctx = cfg.arena.spatial_context(&poses);
    let roster = cfg.roster();
    let backend = ReferenceBackend::new(ctx.clone(), roster.clone());
    let pc = cfg.parse_config().map_err(|e| e.to_string())?;

    let text = std::fs::read_to_string(corpus_path("commands.jsonl")).map_err(|e| e.to_string())?;
    let mut actions = BTreeSet::new();
    let mut modes = BTreeSet::new();
    let mut n = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let case: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let cmd = str_field(&case, "text").ok_or("case without text")?;
        let plan = parse_command(cmd, &backend, &pc, &ctx, &roster).map_err(|e| format!("{cmd:?}: {e}"))?;
        let mode = coordination_mode(&plan);
        if Some(mode.as_str()) != str_field(&case, "mode") {
            return Err(format!("{cmd:?}: mode {mode}"));
        }
        if plan.to_value().get("tasks") != case.get("tasks") {
            return Err(format!("{cmd:?}: plan differs from the expected one"));
        }
        actions.extend(plan.tasks.iter().map(|t| t.action()));
        modes.insert(mode);
        n += 1;
    }
    if n < 30 || actions.len() != ActionType::ALL.len() || modes.len() != CoordinationMode::ALL.len() {
        return Err(format!("{n} commands, {} actions, {} modes", actions.len(), modes.len()));
    }

    let adversarial = std::fs::read_to_string(corpus_path("adversarial.txt")).map_err(|e| e.to_string())?;
    let mut rejected = 0;
    for cmd in adversarial.lines().filter(|l| !l.trim().is_empty()) {
        match parse_command(cmd, &backend, &pc, &ctx, &roster) {
            Err(ParseError::Failed(f)) => {
                let temps: Vec<f64> = f.attempts.iter().map(|a| a.temperature).collect();
                if temps.len() != pc.max_attempts as usize || temps.windows(2).any(|w| w[1] < w[0]) {
                    return Err(format!("{cmd:?}: attempts at temperatures {temps:?}"));
                }
                rejected += 1;
            }
            Ok(_) => return Err(format!("{cmd:?} was accepted")),
            Err(e) => return Err(format!("{cmd:?}: {e}")),
        }
    }
    if rejected < 10 {
        return Err(format!("only {rejected} adversarial commands"));
    }
    Ok(format!(
        "{n}/{n} valid over {} actions and {} modes; {rejected} adversarial rejected after {} attempts",
        actions.len(),
        modes.len(),
        pc.max_attempts
    ))
}

fn pair_distance(robots: &BTreeMap<String, [f64; 3]>) -> Option<f64> {
    let mut it = robots.values();
    let (a, b) = (it.next()?, it.next()?);
    Some((a[0] - b[0]).hypot(a[1] - b[1]))
}

fn criterion_7() -> Verdict {
    let mut min_dist = f64::INFINITY;
    let mut worst_spacing: f64 = 0.0;
    for id in [ScenarioId::Parallel, ScenarioId::Synchronous] {
        let spec = ScenarioSpec::preset(id, seeds(50));
        let tol = spec.config.tolerances.sync_spacing;
        for &seed in &spec.seeds {
            let (outcome, world) = run_seed(&spec, seed).map_err(|e| e.to_string())?;
            if !outcome.success {
                return Err(format!("{id:?} seed {seed} failed"));
            }
            let trace = world.trace();
            let d = trace.min_pairwise_distance(spec.script[1].t).ok_or("no frames")?;
            if d < 2.0 * SAFETY_RADIUS {
                return Err(format!("{id:?} seed {seed}: robots {d:.3} m apart"));
            }
            min_dist = min_dist.min(d);
            if id != ScenarioId::Synchronous {
                continue;
            }
            let from = trace.events_of("sync_motion_start").map(|e| e.t).fold(f64::MIN, f64::max);
            let to = trace.events_of("sync_motion_end").map(|e| e.t).fold(f64::MAX, f64::min);
            let spacing = trace
                .events_of("parse_ok")
                .find_map(|e| e.data.pointer("/plan/tasks/0/params/spacing").and_then(Value::as_f64))
                .ok_or("no transport spacing in the plan")?;
            for (t, robots, _) in trace.frames() {
                if t < from || t > to {
                    continue;
                }
                let dev = (pair_distance(robots).ok_or("one robot")? - spacing).abs();
                if dev > tol {
                    return Err(format!("seed {seed}: spacing off by {dev:.4} m at t={t:.2}"));
                }
                worst_spacing = worst_spacing.max(dev);
            }
        }
    }
    Ok(format!(
        "min distance {min_dist:.3} m >= {:.1}; worst transport spacing error {worst_spacing:.4} m",
        2.0 * SAFETY_RADIUS
    ))
}

fn dir_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        out.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

fn criterion_8() -> Verdict {
    let mut files = 0;
    for id in [ScenarioId::Sequential, ScenarioId::Parallel, ScenarioId::Synchronous] {
        let mut spec = ScenarioSpec::preset(id, vec![3, 17, 42]);
        spec.config.faults.drop_prob = 0.05;
        spec.config.faults.latency_jitter = 0.1;
        spec.config.faults.clock_offset_max = 0.02;
        let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
        run_scenario_to_dir(&spec, a.path()).map_err(|e| e.to_string())?;
        run_scenario_to_dir(&spec, b.path()).map_err(|e| e.to_string())?;
        let (x, y) = (dir_bytes(a.path())?, dir_bytes(b.path())?);
        if x != y {
            let differing: Vec<_> = x.keys().filter(|k| x.get(*k) != y.get(*k)).collect();
            return Err(format!("{id:?}: {differing:?} differ"));
        }
        files += x.len();
    }
    Ok(format!("{files} trace, message and metrics files byte-identical across reruns"))
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Verdict); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        match check() {
            Ok(detail) => println!("criterion {n}: PASS {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
