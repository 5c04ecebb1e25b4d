//! Turning a validated plan into staged assignments, and deciding what to
//! cancel when a task fails.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::protocol::{Message, MsgType};
use crate::task_model::{build_dependency_graph, coordination_mode, CoordinationMode, DependencyGraph, TaskPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeoutConfig {
    pub base: f64,
    pub factor: f64,
}

impl Default for TimeoutConfig {
    fn default() -> Self {
        Self { base: 2.0, factor: 1.5 }
    }
}

pub fn compute_timeout(estimate: f64, cfg: &TimeoutConfig) -> f64 {
    cfg.base + cfg.factor * estimate
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    pub robot: String,
    pub estimate: f64,
    pub timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncGroup {
    pub leader: String,
    /// Robot id to task id.
    pub members: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSchedule {
    pub stages: Vec<Vec<String>>,
    pub assignments: BTreeMap<String, Assignment>,
    pub mode: CoordinationMode,
    pub leader: Option<String>,
    pub groups: BTreeMap<String, SyncGroup>,
    #[serde(skip)]
    pub graph: DependencyGraph,
    #[serde(skip)]
    task_group: BTreeMap<String, String>,
}

impl DispatchSchedule {
    pub fn group_of(&self, task_id: &str) -> Option<&str> {
        self.task_group.get(task_id).map(String::as_str)
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.assignments.keys().map(String::as_str)
    }
}

/// Builds the schedule. `estimates` maps task id to nominal duration;
/// missing entries fall back to one second. Members of a sync group share the
/// largest estimate in the group, since they finish together.
pub fn schedule(plan: &TaskPlan, estimates: &BTreeMap<String, f64>, cfg: &TimeoutConfig) -> DispatchSchedule {
    let graph = build_dependency_graph(plan);
    let mode = coordination_mode(plan);
    let mut groups = BTreeMap::new();
    let mut task_group = BTreeMap::new();
    for (label, robots) in plan.sync_groups() {
        let members: BTreeMap<String, String> = plan
            .tasks
            .iter()
            .filter(|t| t.sync_group.as_deref() == Some(label.as_str()))
            .map(|t| (t.robot.clone(), t.id.clone()))
            .collect();
        for id in members.values() {
            task_group.insert(id.clone(), label.clone());
        }
        let leader = robots.iter().next().cloned().unwrap_or_default();
        groups.insert(label, SyncGroup { leader, members });
    }
    let estimate_of = |id: &str| estimates.get(id).copied().unwrap_or(1.0);
    let mut assignments = BTreeMap::new();
    for t in &plan.tasks {
        let estimate = match task_group.get(&t.id) {
            Some(g) => groups[g]
                .members
                .values()
                .map(|id| estimate_of(id))
                .fold(0.0, f64::max),
            None => estimate_of(&t.id),
        };
        assignments.insert(
            t.id.clone(),
            Assignment {
                robot: t.robot.clone(),
                estimate,
                timeout: compute_timeout(estimate, cfg),
            },
        );
    }
    let leader = groups.values().map(|g| g.leader.clone()).min();
    DispatchSchedule {
        stages: graph.stages.clone(),
        assignments,
        mode,
        leader,
        groups,
        graph,
        task_group,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegradationPlan {
    pub cancelled: BTreeSet<String>,
    pub continuing: BTreeSet<String>,
    /// ABORT notices, one per cancelled task, addressed to its robot.
    pub notifications: Vec<(String, Message)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DegradeError {
    #[error("unknown task {0}")]
    UnknownTask(String),
}

/// Decides which tasks to cancel after `failed` fails. Tasks in `done`
/// are never cancelled.
pub fn degrade(
    schedule: &DispatchSchedule,
    failed: &str,
    reason: &str,
    done: &BTreeSet<String>,
    sender: &str,
    now: f64,
    session_prefix: &str,
) -> Result<DegradationPlan, DegradeError> {
    if !schedule.assignments.contains_key(failed) {
        return Err(DegradeError::UnknownTask(failed.to_string()));
    }
    let mut cancelled = BTreeSet::from([failed.to_string()]);
    match schedule.mode {
        CoordinationMode::MultiParallel => {}
        CoordinationMode::SingleSequential | CoordinationMode::CrossRobotOrdered => {
            cancelled.extend(schedule.graph.downstream(failed));
        }
        CoordinationMode::Synchronous => {
            let roots: Vec<String> = match schedule.group_of(failed) {
                Some(g) => schedule.groups[g].members.values().cloned().collect(),
                None => vec![failed.to_string()],
            };
            for r in roots {
                cancelled.extend(schedule.graph.downstream(&r));
                cancelled.insert(r);
            }
        }
    }
    cancelled.retain(|id| !done.contains(id));
    let continuing = schedule
        .assignments
        .keys()
        .filter(|id| !cancelled.contains(*id) && !done.contains(*id))
        .cloned()
        .collect();
    let notifications = cancelled
        .iter()
        .map(|id| {
            let robot = schedule.assignments[id].robot.clone();
            let msg = Message::new(
                MsgType::Abort,
                &format!("{session_prefix}:{id}"),
                id,
                sender,
                now,
                json!({ "reason": if id == failed { reason.to_string() } else { format!("cancelled after {failed} failed") } }),
            );
            (robot, msg)
        })
        .collect();
    Ok(DegradationPlan {
        cancelled,
        continuing,
        notifications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_model::{validate_value, Roster};
    use proptest::prelude::*;

    fn plan(v: serde_json::Value) -> TaskPlan {
        validate_value(&v, &Roster::default()).unwrap()
    }

    fn transport(id: &str, robot: &str, obj: &str) -> serde_json::Value {
        json!({"id": id, "robot": robot, "action": "transport", "params": {"object_id": obj, "target": {"x": 1.0, "y": 1.0}}})
    }

    fn sequential() -> TaskPlan {
        let mut a = transport("t1", "robot1", "A");
        a["sequence"] = json!(1);
        let mut b = transport("t2", "robot1", "B");
        b["sequence"] = json!(2);
        plan(json!({"command": "c", "tasks": [a, b]}))
    }

    fn parallel() -> TaskPlan {
        plan(json!({"command": "c", "tasks": [transport("t1", "robot1", "A"), transport("t2", "robot2", "B")]}))
    }

    fn synchronous() -> TaskPlan {
        let ct = |id: &str, robot: &str, partner: &str| {
            json!({"id": id, "robot": robot, "action": "contactless_transport", "sync_group": "sync1",
                   "params": {"object_id": "C", "target": {"x": 2.3, "y": 1.5}, "partner": partner, "spacing": 0.4}})
        };
        let after = json!({"id": "t3", "robot": "robot1", "action": "speak", "params": {"text": "done"}, "sequence": 2});
        let mut a = ct("t1", "robot1", "robot2");
        a["sequence"] = json!(1);
        let mut b = ct("t2", "robot2", "robot1");
        b["sequence"] = json!(1);
        plan(json!({"command": "c", "tasks": [b, a, after]}))
    }

    #[test]
    fn timeout_formula() {
        let cfg = TimeoutConfig::default();
        assert_eq!(compute_timeout(10.0, &cfg), 17.0);
        assert!((compute_timeout(0.1, &cfg) - 2.15).abs() < 1e-12);
    }

    #[test]
    fn scenario_shapes() {
        let s = schedule(&sequential(), &BTreeMap::new(), &TimeoutConfig::default());
        assert_eq!(s.stages, vec![vec!["t1".to_string()], vec!["t2".to_string()]]);
        assert!(s.assignments.values().all(|a| a.robot == "robot1"));
        assert_eq!(s.mode, CoordinationMode::SingleSequential);

        let s = schedule(&parallel(), &BTreeMap::new(), &TimeoutConfig::default());
        assert_eq!(s.stages.len(), 1);
        assert_eq!(s.assignments.len(), 2);

        let s = schedule(&synchronous(), &BTreeMap::new(), &TimeoutConfig::default());
        assert_eq!(s.leader.as_deref(), Some("robot1"));
        assert_eq!(s.groups["sync1"].members["robot2"], "t2");
    }

    #[test]
    fn group_members_share_longest_estimate() {
        let est = BTreeMap::from([("t1".to_string(), 4.0), ("t2".to_string(), 10.0)]);
        let s = schedule(&synchronous(), &est, &TimeoutConfig::default());
        assert_eq!(s.assignments["t1"].timeout, 17.0);
        assert_eq!(s.assignments["t2"].timeout, 17.0);
    }

    #[test]
    fn degrade_per_mode() {
        let none = BTreeSet::new();
        let s = schedule(&parallel(), &BTreeMap::new(), &TimeoutConfig::default());
        let d = degrade(&s, "t2", "timeout", &none, "scheduler", 5.0, "c1").unwrap();
        assert_eq!(d.cancelled, BTreeSet::from(["t2".to_string()]));
        assert_eq!(d.continuing, BTreeSet::from(["t1".to_string()]));
        assert_eq!(d.notifications[0].0, "robot2");

        let s = schedule(&sequential(), &BTreeMap::new(), &TimeoutConfig::default());
        let d = degrade(&s, "t1", "timeout", &none, "scheduler", 5.0, "c1").unwrap();
        assert_eq!(d.cancelled.len(), 2);

        let s = schedule(&synchronous(), &BTreeMap::new(), &TimeoutConfig::default());
        let d = degrade(&s, "t2", "timeout", &none, "scheduler", 5.0, "c1").unwrap();
        assert_eq!(d.cancelled, ["t1", "t2", "t3"].iter().map(|s| s.to_string()).collect());
        assert!(d.notifications.iter().all(|(_, m)| m.kind == MsgType::Abort));

        assert_eq!(
            degrade(&s, "t9", "x", &none, "scheduler", 0.0, "c1"),
            Err(DegradeError::UnknownTask("t9".into()))
        );
    }

    proptest! {
        #[test]
        fn degrade_spares_done_tasks(which in 0usize..3, done_mask in 0u8..8) {
            for p in [sequential(), parallel(), synchronous()] {
                let s = schedule(&p, &BTreeMap::new(), &TimeoutConfig::default());
                let ids: Vec<String> = s.assignments.keys().cloned().collect();
                let failed = &ids[which % ids.len()];
                let done: BTreeSet<String> = ids
                    .iter()
                    .enumerate()
                    .filter(|(i, id)| done_mask & (1 << i) != 0 && *id != failed)
                    .map(|(_, id)| id.clone())
                    .collect();
                let d = degrade(&s, failed, "x", &done, "scheduler", 0.0, "c").unwrap();
                prop_assert!(d.cancelled.is_disjoint(&done));
                prop_assert!(d.cancelled.contains(failed));
                prop_assert!(d.continuing.is_disjoint(&d.cancelled));
            }
        }

        #[test]
        fn timeout_is_affine_in_estimate(e in 0.01f64..1000.0) {
            let cfg = TimeoutConfig::default();
            let diff = compute_timeout(2.0 * e, &cfg) - compute_timeout(e, &cfg);
            prop_assert!((diff - cfg.factor * e).abs() <= 1e-9 * e.max(1.0));
        }
    }
}
