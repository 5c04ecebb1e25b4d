//! The tracked workspace: bounds, named places, objects and robot starts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Bounds, Point2D, Pose2D};
use crate::nl_parse::SpatialContext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
    pub named_locations: BTreeMap<String, Point2D>,
    pub objects: BTreeMap<String, Point2D>,
    pub robots: BTreeMap<String, Pose2D>,
    #[serde(default)]
    pub user_pose: Option<Pose2D>,
    #[serde(default = "default_safety_radius")]
    pub safety_radius: f64,
    #[serde(default = "default_pickup_radius")]
    pub pickup_radius: f64,
}

fn default_safety_radius() -> f64 {
    0.15
}

fn default_pickup_radius() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArenaError {
    #[error("arena must have positive size, got {0} x {1}")]
    Size(f64, f64),
    #[error("{kind} {name} at ({x}, {y}) is outside the arena")]
    OutOfBounds { kind: &'static str, name: String, x: f64, y: f64 },
    #[error("arena has no robots")]
    NoRobots,
}

impl Default for Arena {
    fn default() -> Self {
        let pt = |x, y| Point2D::new(x, y);
        Self {
            width: 3.0,
            height: 3.0,
            named_locations: BTreeMap::from([
                ("station_one".into(), pt(2.2, 0.4)),
                ("station_two".into(), pt(0.8, 2.6)),
                ("dock".into(), pt(2.3, 1.5)),
                ("storage".into(), pt(0.4, 1.5)),
                ("charging_station".into(), pt(2.0, 1.0)),
            ]),
            objects: BTreeMap::from([
                ("A".into(), pt(1.0, 0.4)),
                ("B".into(), pt(2.0, 2.6)),
                ("C".into(), pt(1.5, 1.5)),
            ]),
            robots: BTreeMap::from([
                ("robot1".into(), Pose2D::new(0.4, 0.4, 0.0)),
                ("robot2".into(), Pose2D::new(2.6, 2.6, std::f64::consts::PI)),
            ]),
            user_pose: Some(Pose2D::new(1.5, 0.2, std::f64::consts::FRAC_PI_2)),
            safety_radius: default_safety_radius(),
            pickup_radius: default_pickup_radius(),
        }
    }
}

impl Arena {
    pub fn bounds(&self) -> Bounds {
        Bounds {
            width: self.width,
            height: self.height,
        }
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(ArenaError::Size(self.width, self.height));
        }
        if self.robots.is_empty() {
            return Err(ArenaError::NoRobots);
        }
        let b = self.bounds();
        let named = self.named_locations.iter().map(|(n, p)| ("location", n, *p));
        let objects = self.objects.iter().map(|(n, p)| ("object", n, *p));
        let robots = self.robots.iter().map(|(n, p)| ("robot", n, p.position()));
        for (kind, name, p) in named.chain(objects).chain(robots) {
            if !b.contains(&p) {
                return Err(ArenaError::OutOfBounds {
                    kind,
                    name: name.clone(),
                    x: p.x,
                    y: p.y,
                });
            }
        }
        Ok(())
    }

    /// Spatial context for grounding commands against this arena, with the
    /// given live robot poses.
    pub fn spatial_context(&self, robot_poses: &BTreeMap<String, Pose2D>) -> SpatialContext {
        SpatialContext {
            named_locations: self.named_locations.clone(),
            user_pose: self.user_pose,
            robot_poses: robot_poses.clone(),
            bounds: Some(self.bounds()),
        }
    }
}
