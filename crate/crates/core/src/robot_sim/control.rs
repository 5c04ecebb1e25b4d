//! Point-to-point navigation: coarse drive, fine alignment, then heading
//! correction.

use serde::{Deserialize, Serialize};

use super::dynamics::{Command, VelocityLimits};
use crate::geometry::{angle_diff, Point2D, Pose2D};
use std::f64::consts::{FRAC_PI_2, PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub limits: VelocityLimits,
    /// Proportional gain from distance to speed, 1/s.
    pub gain: f64,
    /// Proportional gain from heading error to turn rate, 1/s.
    pub heading_gain: f64,
    pub v_fine: f64,
    pub fine_threshold: f64,
    /// Reported position tolerance.
    pub pos_tol: f64,
    /// The controller stops at this estimated distance, leaving margin for
    /// estimation error inside `pos_tol`.
    pub stop_tol: f64,
    pub ang_tol: f64,
    /// Heading tolerance used when forming up for joint transport.
    pub formation_ang_tol: f64,
    /// Beyond this bearing error the robot turns on the spot first.
    pub rotate_threshold: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            limits: VelocityLimits::default(),
            gain: 1.0,
            heading_gain: 2.0,
            v_fine: 0.02,
            fine_threshold: 0.05,
            pos_tol: 0.005,
            stop_tol: 0.0025,
            ang_tol: 0.02,
            formation_ang_tol: 0.003,
            rotate_threshold: 0.35,
        }
    }
}

/// Speed for the remaining distance: proportional, saturated at `v_max`,
/// and capped at `v_fine` inside `fine_threshold`.
pub fn adaptive_velocity(distance: f64, cfg: &ControllerConfig) -> f64 {
    let v = (cfg.gain * distance.max(0.0)).min(cfg.limits.v_max);
    if distance < cfg.fine_threshold {
        v.min(cfg.v_fine)
    } else {
        v
    }
}

fn turn_rate(err: f64, cfg: &ControllerConfig) -> f64 {
    (cfg.heading_gain * err).clamp(-cfg.limits.w_max, cfg.limits.w_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NavPhase {
    Position,
    Heading,
    Arrived,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NavController {
    pub goal: Point2D,
    pub heading: Option<f64>,
    pub heading_tol: f64,
    /// Drive backwards when the goal is behind rather than turning round.
    pub allow_reverse: bool,
    pub phase: NavPhase,
}

impl NavController {
    pub fn new(goal: Point2D, heading: Option<f64>, heading_tol: f64) -> Self {
        Self {
            goal,
            heading,
            heading_tol,
            allow_reverse: false,
            phase: NavPhase::Position,
        }
    }

    pub fn rotate_to(current: Pose2D, heading: f64, heading_tol: f64) -> Self {
        Self {
            goal: current.position(),
            heading: Some(heading),
            heading_tol,
            allow_reverse: false,
            phase: NavPhase::Heading,
        }
    }

    pub fn arrived(&self) -> bool {
        self.phase == NavPhase::Arrived
    }

    /// Command for the current pose estimate.
    pub fn command(&mut self, est: Pose2D, cfg: &ControllerConfig) -> Command {
        let d = est.position().distance(&self.goal);
        if self.phase == NavPhase::Position && d <= cfg.stop_tol {
            self.phase = if self.heading.is_some() { NavPhase::Heading } else { NavPhase::Arrived };
        }
        if self.phase == NavPhase::Heading && d > cfg.pos_tol {
            // pushed off the goal while turning
            self.phase = NavPhase::Position;
        }
        match self.phase {
            NavPhase::Arrived => Command::STOP,
            NavPhase::Heading => {
                let err = angle_diff(self.heading.unwrap_or(est.theta), est.theta);
                if err.abs() <= self.heading_tol {
                    self.phase = NavPhase::Arrived;
                    return Command::STOP;
                }
                Command { v: 0.0, w: turn_rate(err, cfg) }
            }
            NavPhase::Position => {
                let bearing = est.position().bearing_to(&self.goal);
                let mut err = angle_diff(bearing, est.theta);
                let fine = d < cfg.fine_threshold;
                let mut dir = 1.0;
                if (fine || self.allow_reverse) && err.abs() > FRAC_PI_2 {
                    err = angle_diff(bearing + PI, est.theta);
                    dir = -1.0;
                }
                if !fine && err.abs() > cfg.rotate_threshold {
                    return Command { v: 0.0, w: turn_rate(err, cfg) };
                }
                let v = dir * adaptive_velocity(d, cfg) * err.cos().max(0.0);
                Command { v, w: turn_rate(err, cfg) }.clamped(&cfg.limits)
            }
        }
    }
}
