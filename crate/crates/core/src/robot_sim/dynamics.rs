//! Unicycle kinematics of a differential-drive base.

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits {
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self { v_max: 0.22, w_max: 2.84 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub v: f64,
    pub w: f64,
}

impl Command {
    pub const STOP: Command = Command { v: 0.0, w: 0.0 };

    pub fn clamped(self, limits: &VelocityLimits) -> Command {
        Command {
            v: self.v.clamp(-limits.v_max, limits.v_max),
            w: self.w.clamp(-limits.w_max, limits.w_max),
        }
    }

    pub fn is_stop(&self) -> bool {
        self.v == 0.0 && self.w == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotState {
    pub id: String,
    pub pose: Pose2D,
    pub linear_v: f64,
    pub angular_v: f64,
    pub carrying: Option<String>,
    pub current_task: Option<String>,
}

impl RobotState {
    pub fn new(id: &str, pose: Pose2D) -> Self {
        Self {
            id: id.to_string(),
            pose,
            linear_v: 0.0,
            angular_v: 0.0,
            carrying: None,
            current_task: None,
        }
    }
}

/// One explicit Euler step of the pose under a constant command.
pub fn integrate_pose(pose: Pose2D, cmd: Command, dt: f64) -> Pose2D {
    Pose2D {
        x: pose.x + cmd.v * pose.theta.cos() * dt,
        y: pose.y + cmd.v * pose.theta.sin() * dt,
        theta: normalize_angle(pose.theta + cmd.w * dt),
    }
}

/// Advances `state` by `dt` under `cmd`, clamped to `limits`.
pub fn step_dynamics(state: &RobotState, cmd: Command, limits: &VelocityLimits, dt: f64) -> RobotState {
    let cmd = cmd.clamped(limits);
    RobotState {
        pose: integrate_pose(state.pose, cmd, dt),
        linear_v: cmd.v,
        angular_v: cmd.w,
        ..state.clone()
    }
}
