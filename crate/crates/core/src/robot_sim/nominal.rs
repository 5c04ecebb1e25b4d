//! Nominal task durations used to size timeouts.
//!
//! The model assumes a robot turns toward each leg at half its turn-rate
//! limit, drives at 80% of its speed limit and then spends a fixed time in
//! fine alignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::formation::formation_back_to_back;
use crate::coordination::barrier::DEFAULT_START_DELAY;
use crate::geometry::{angle_diff, Point2D, Pose2D};
use crate::task_model::{build_dependency_graph, ActionParams, Task, TaskPlan};

use super::arena::Arena;
use super::dynamics::VelocityLimits;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NominalModel {
    pub limits: VelocityLimits,
    pub speed_fraction: f64,
    pub turn_fraction: f64,
    pub fine_time: f64,
    pub v_sync: f64,
    pub speak_time: f64,
}

impl Default for NominalModel {
    fn default() -> Self {
        Self {
            limits: VelocityLimits::default(),
            speed_fraction: 0.8,
            turn_fraction: 0.5,
            fine_time: 3.0,
            v_sync: 0.1,
            speak_time: 0.5,
        }
    }
}

impl NominalModel {
    fn turn_time(&self, angle: f64) -> f64 {
        angle.abs() / (self.turn_fraction * self.limits.w_max)
    }

    /// Time to reach `goal` (and optionally `heading`) from `from`.
    pub fn leg(&self, from: Pose2D, goal: Point2D, heading: Option<f64>) -> (f64, Pose2D) {
        let d = from.position().distance(&goal);
        let bearing = if d > 1e-9 { from.position().bearing_to(&goal) } else { from.theta };
        let mut t = self.turn_time(angle_diff(bearing, from.theta)) + d / (self.speed_fraction * self.limits.v_max);
        t += self.fine_time;
        let end_heading = heading.unwrap_or(bearing);
        t += self.turn_time(angle_diff(end_heading, bearing));
        (t, Pose2D::new(goal.x, goal.y, end_heading))
    }

    /// Duration of `task` from `pose` and the pose it ends in. Targets must
    /// be grounded.
    pub fn task(&self, task: &Task, pose: Pose2D, arena: &Arena, sync_leader: bool) -> (f64, Pose2D) {
        let point = |t: &crate::task_model::Target| t.point().unwrap_or(pose.position());
        match &task.params {
            ActionParams::Move { distance } => {
                let goal = pose.position().offset(pose.theta, *distance);
                (distance.abs() / (self.speed_fraction * self.limits.v_max) + self.fine_time, Pose2D::new(goal.x, goal.y, pose.theta))
            }
            ActionParams::Turn { angle } => (self.turn_time(*angle) + 1.0, Pose2D::new(pose.x, pose.y, pose.theta + angle)),
            ActionParams::Navigate { target } => self.leg(pose, point(target), target.heading()),
            ActionParams::Follow { duration, .. } => (duration + 1.0, pose),
            ActionParams::Collect { .. } => (1.0, pose),
            ActionParams::Deliver { object_id, target } | ActionParams::Transport { object_id, target } => {
                let obj = arena.objects.get(object_id).copied().unwrap_or(pose.position());
                let (t1, p1) = self.leg(pose, obj, None);
                let (t2, p2) = self.leg(p1, point(target), target.heading());
                (t1 + t2 + 1.0, p2)
            }
            ActionParams::Speak { .. } => (self.speak_time, pose),
            ActionParams::Wait { duration } => (*duration, pose),
            ActionParams::ContactlessTransport { object_id, target, spacing, .. } => {
                let obj = arena.objects.get(object_id).copied().unwrap_or(pose.position());
                let dest = point(target);
                let axis = obj.bearing_to(&dest);
                let (l, f) = formation_back_to_back(obj, *spacing, axis);
                let slot = if sync_leader { l } else { f };
                let (t1, _) = self.leg(pose, slot.position(), Some(slot.theta));
                let travel = obj.distance(&dest);
                let end = slot.position().offset(axis, travel);
                let t = t1 + DEFAULT_START_DELAY + 2.0 + travel / self.v_sync + self.fine_time;
                (t, Pose2D::new(end.x, end.y, slot.theta))
            }
        }
    }

    /// Estimates for every task of a grounded plan, walking the stages in
    /// order and carrying each robot's predicted pose forward.
    pub fn estimate_plan(&self, plan: &TaskPlan, arena: &Arena, poses: &BTreeMap<String, Pose2D>) -> BTreeMap<String, f64> {
        let graph = build_dependency_graph(plan);
        let groups = plan.sync_groups();
        let mut poses = poses.clone();
        let mut out = BTreeMap::new();
        for stage in &graph.stages {
            for id in stage {
                let Some(task) = plan.task(id) else { continue };
                let leader = task
                    .sync_group
                    .as_ref()
                    .and_then(|g| groups.get(g))
                    .and_then(|m| m.iter().next())
                    .is_some_and(|l| *l == task.robot);
                let start = poses.get(&task.robot).copied().unwrap_or(Pose2D::new(0.0, 0.0, 0.0));
                let (t, end) = self.task(task, start, arena, leader);
                out.insert(id.clone(), t);
                poses.insert(task.robot.clone(), end);
            }
        }
        out
    }
}
