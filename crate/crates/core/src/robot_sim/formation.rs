//! Back-to-back formation around a shared levitated object.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, Point2D, Pose2D};
use std::f64::consts::PI;

/// Goal poses for two robots carrying an object between their arrays.
///
/// The leader sits behind the object along `axis` and faces forward; the
/// follower sits ahead and faces back. The goals are `spacing` apart and
/// their midpoint is the object.
pub fn formation_back_to_back(object: Point2D, spacing: f64, axis: f64) -> (Pose2D, Pose2D) {
    let half = spacing / 2.0;
    let l = object.offset(axis, -half);
    let f = object.offset(axis, half);
    (Pose2D::new(l.x, l.y, axis), Pose2D::new(f.x, f.y, axis + PI))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SymmetryTolerance {
    pub midpoint: f64,
    pub antiparallel: f64,
}

impl Default for SymmetryTolerance {
    fn default() -> Self {
        Self {
            midpoint: 0.005,
            antiparallel: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetryCheck {
    pub midpoint_error: f64,
    pub antiparallel_error: f64,
    pub ok: bool,
}

/// The gate synchronized motion must pass before it may start.
pub fn check_symmetry(leader: Pose2D, follower: Pose2D, object: Point2D, tol: &SymmetryTolerance) -> SymmetryCheck {
    let midpoint_error = leader.position().midpoint(&follower.position()).distance(&object);
    let antiparallel_error = angle_diff(follower.theta, leader.theta + PI).abs();
    SymmetryCheck {
        midpoint_error,
        antiparallel_error,
        ok: midpoint_error <= tol.midpoint && antiparallel_error <= tol.antiparallel,
    }
}
