//! Grounding of symbolic locations ("here", named places, robot names) into
//! arena coordinates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Bounds, Point2D, Pose2D};
use crate::task_model::{Target, TaskPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialContext {
    pub named_locations: BTreeMap<String, Point2D>,
    #[serde(default)]
    pub user_pose: Option<Pose2D>,
    #[serde(default)]
    pub robot_poses: BTreeMap<String, Pose2D>,
    #[serde(default)]
    pub bounds: Option<Bounds>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpatialError {
    #[error("unknown location {0}")]
    UnknownLocation(String),
    #[error("\"{0}\" used but no user pose is available")]
    MissingContext(String),
    #[error("\"there\" has no named location to refer to")]
    UnboundThere,
    #[error("location {name} at ({x}, {y}) lies outside the arena")]
    OutOfBounds { name: String, x: f64, y: f64 },
}

/// Words that refer to the speaker's own position.
pub const USER_REFERENCES: [&str; 3] = ["here", "me", "user"];

impl SpatialContext {
    /// Checks that every known point lies inside the configured bounds.
    pub fn check_bounds(&self) -> Result<(), SpatialError> {
        let Some(bounds) = self.bounds else {
            return Ok(());
        };
        let named = self.named_locations.iter().map(|(n, p)| (n.clone(), *p));
        let robots = self.robot_poses.iter().map(|(n, p)| (n.clone(), p.position()));
        let user = self.user_pose.iter().map(|p| ("user".to_string(), p.position()));
        for (name, p) in named.chain(robots).chain(user) {
            if !bounds.contains(&p) {
                return Err(SpatialError::OutOfBounds { name, x: p.x, y: p.y });
            }
        }
        Ok(())
    }

    pub fn resolve_symbol(&self, symbol: &str) -> Result<Point2D, SpatialError> {
        if USER_REFERENCES.contains(&symbol) {
            return self
                .user_pose
                .map(|p| p.position())
                .ok_or_else(|| SpatialError::MissingContext(symbol.to_string()));
        }
        if symbol == "there" {
            return Err(SpatialError::UnboundThere);
        }
        if let Some(p) = self.named_locations.get(symbol) {
            return Ok(*p);
        }
        if let Some(p) = self.robot_poses.get(symbol) {
            return Ok(p.position());
        }
        Err(SpatialError::UnknownLocation(symbol.to_string()))
    }
}

/// Replaces every symbolic target in `plan` with coordinates.
///
/// Already-numeric targets are left untouched, so applying this twice gives
/// the same plan.
pub fn resolve_spatial_refs(plan: &TaskPlan, ctx: &SpatialContext) -> Result<TaskPlan, SpatialError> {
    let mut out = plan.clone();
    for task in &mut out.tasks {
        if let Some(target) = task.params.target_mut() {
            if let Target::Symbol(name) = target {
                *target = Target::Point(ctx.resolve_symbol(name)?);
            }
        }
    }
    Ok(out)
}
