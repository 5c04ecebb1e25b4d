//! Line-delimited trace records and the queries the checks run over them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    /// True poses as `[x, y, theta]` and object positions as `[x, y]`.
    Frame {
        t: f64,
        robots: BTreeMap<String, [f64; 3]>,
        objects: BTreeMap<String, [f64; 2]>,
    },
    Event {
        t: f64,
        agent: String,
        kind: String,
        data: Value,
    },
}

impl TraceRecord {
    pub fn t(&self) -> f64 {
        match self {
            TraceRecord::Frame { t, .. } | TraceRecord::Event { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

/// A borrowed event record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRef<'a> {
    pub t: f64,
    pub agent: &'a str,
    pub kind: &'a str,
    pub data: &'a Value,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn events(&self) -> impl Iterator<Item = EventRef<'_>> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Event { t, agent, kind, data } => Some(EventRef {
                t: *t,
                agent,
                kind,
                data,
            }),
            TraceRecord::Frame { .. } => None,
        })
    }

    pub fn events_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = EventRef<'a>> + 'a {
        self.events().filter(move |e| e.kind == kind)
    }

    pub fn frames(&self) -> impl Iterator<Item = (f64, &BTreeMap<String, [f64; 3]>, &BTreeMap<String, [f64; 2]>)> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Frame { t, robots, objects } => Some((*t, robots, objects)),
            TraceRecord::Event { .. } => None,
        })
    }

    /// Smallest distance between any two robots over frames at or after `from`.
    pub fn min_pairwise_distance(&self, from: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (t, robots, _) in self.frames() {
            if t < from {
                continue;
            }
            let poses: Vec<&[f64; 3]> = robots.values().collect();
            for i in 0..poses.len() {
                for j in i + 1..poses.len() {
                    let d = (poses[i][0] - poses[j][0]).hypot(poses[i][1] - poses[j][1]);
                    best = Some(best.map_or(d, |b| b.min(d)));
                }
            }
        }
        best
    }

    /// Time of the first delivery of `object`, if any.
    pub fn delivery_time(&self, object: &str) -> Option<f64> {
        self.events_of("deliver")
            .find(|e| e.data.get("object").and_then(Value::as_str) == Some(object))
            .map(|e| e.t)
    }

    /// Plan success recomputed from raw events: a dispatched plan succeeded
    /// when the scheduler recorded `task_done` for every one of its tasks.
    pub fn plan_successes(&self) -> Vec<(String, bool)> {
        let mut plans = Vec::new();
        for e in self.events_of("plan_dispatched") {
            let prefix = e.data.get("prefix").and_then(Value::as_str).unwrap_or_default().to_string();
            let mode = e.data.get("mode").and_then(Value::as_str).unwrap_or_default().to_string();
            let tasks: Vec<String> = e
                .data
                .get("tasks")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                .unwrap_or_default();
            let done = tasks.iter().all(|id| {
                self.events_of("task_done").any(|d| {
                    d.agent == "scheduler"
                        && d.data.get("prefix").and_then(Value::as_str) == Some(prefix.as_str())
                        && d.data.get("task").and_then(Value::as_str) == Some(id.as_str())
                })
            });
            plans.push((mode, done && !tasks.is_empty()));
        }
        plans
    }
}
