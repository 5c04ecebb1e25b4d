//! Per-run outcomes and their aggregate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::session::{OutcomeStatus, TaskOutcome};

/// One transcript that reached the parser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub text: String,
    /// Simulated time the parser was invoked.
    pub at: f64,
    pub parsed: bool,
    pub parse_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_motion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<f64>,
    pub outcomes: Vec<TaskOutcome>,
}

impl CommandRecord {
    /// A plan succeeds when every task ended DONE.
    pub fn success(&self) -> bool {
        self.parsed
            && self.finished_at.is_some()
            && !self.outcomes.is_empty()
            && self.outcomes.iter().all(|o| o.status == OutcomeStatus::Done)
    }

    pub fn coordination_latency(&self) -> Option<f64> {
        self.first_motion.map(|m| m - self.at)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub success: bool,
    pub timed_out: bool,
    pub end_time: f64,
    pub commands: Vec<CommandRecord>,
    /// Sent messages by type, plus `dropped`.
    pub messages: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModeStats {
    pub plans: u64,
    pub successes: u64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub runs: u64,
    /// Execution success by coordination mode, over dispatched plans.
    pub modes: BTreeMap<String, ModeStats>,
    pub commands: u64,
    pub parsed: u64,
    pub parse_success_rate: f64,
    /// Mean simulated time from parser invocation to first robot motion.
    pub mean_coordination_latency: Option<f64>,
    pub messages: BTreeMap<String, u64>,
    pub outcomes: Vec<RunOutcome>,
}

fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl MetricsReport {
    pub fn aggregate(scenario: &str, outcomes: Vec<RunOutcome>) -> Self {
        let mut modes: BTreeMap<String, ModeStats> = BTreeMap::new();
        let mut messages = BTreeMap::new();
        let (mut commands, mut parsed) = (0, 0);
        let mut latencies = Vec::new();
        for run in &outcomes {
            for c in &run.commands {
                commands += 1;
                if !c.parsed {
                    continue;
                }
                parsed += 1;
                let m = modes.entry(c.mode.clone().unwrap_or_default()).or_default();
                m.plans += 1;
                m.successes += u64::from(c.success());
                latencies.extend(c.coordination_latency());
            }
            for (k, v) in &run.messages {
                *messages.entry(k.clone()).or_insert(0) += v;
            }
        }
        for m in modes.values_mut() {
            m.success_rate = rate(m.successes, m.plans);
        }
        let mean_coordination_latency =
            (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64);
        Self {
            scenario: scenario.to_string(),
            runs: outcomes.len() as u64,
            modes,
            commands,
            parsed,
            parse_success_rate: rate(parsed, commands),
            mean_coordination_latency,
            messages,
            outcomes,
        }
    }

    /// Success rate over all plans, whatever their mode.
    pub fn success_rate(&self) -> f64 {
        let plans = self.modes.values().map(|m| m.plans).sum();
        rate(self.modes.values().map(|m| m.successes).sum(), plans)
    }

    pub fn mode_rate(&self, mode: &str) -> Option<f64> {
        self.modes.get(mode).map(|m| m.success_rate)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn command(mode: &str, ok: bool, latency: f64) -> CommandRecord {
        CommandRecord {
            text: "c".into(),
            at: 1.0,
            parsed: true,
            parse_attempts: 1,
            parse_error: None,
            prefix: Some("c1".into()),
            mode: Some(mode.into()),
            first_motion: Some(1.0 + latency),
            finished_at: Some(10.0),
            outcomes: vec![TaskOutcome {
                task_id: "t1".into(),
                robot: "robot1".into(),
                status: if ok { OutcomeStatus::Done } else { OutcomeStatus::Failed },
                reason: None,
            }],
        }
    }

    fn run(seed: u64, commands: Vec<CommandRecord>) -> RunOutcome {
        RunOutcome {
            seed,
            success: commands.iter().all(CommandRecord::success),
            timed_out: false,
            end_time: 10.0,
            commands,
            messages: BTreeMap::from([("ASSIGN".into(), 1)]),
        }
    }

    #[test]
    fn aggregates_rates() {
        let mut unparsed = command("x", false, 0.0);
        unparsed.parsed = false;
        unparsed.mode = None;
        let r = MetricsReport::aggregate(
            "s",
            vec![
                run(0, vec![command("synchronous", true, 0.2)]),
                run(1, vec![command("synchronous", false, 0.4)]),
                run(2, vec![unparsed]),
            ],
        );
        assert_eq!(r.runs, 3);
        assert_eq!(r.mode_rate("synchronous"), Some(50.0));
        assert!((r.parse_success_rate - 200.0 / 3.0).abs() < 1e-9);
        assert!((r.mean_coordination_latency.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(r.messages["ASSIGN"], 3);
        assert_eq!(r.success_rate(), 50.0);
    }

    #[test]
    fn empty_report_is_zero() {
        let r = MetricsReport::aggregate("s", vec![]);
        assert_eq!(r.parse_success_rate, 0.0);
        assert_eq!(r.mean_coordination_latency, None);
    }
}
