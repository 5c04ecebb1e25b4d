//! Deterministic goal slots for robots whose goals collide.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::geometry::{Point2D, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocationConfig {
    pub k_spread: f64,
    pub min_approach: f64,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            k_spread: 2.0,
            min_approach: 0.3,
        }
    }
}

pub fn slot_radius(n: usize, safety_radius: f64, cfg: &AllocationConfig) -> f64 {
    let r = (safety_radius * cfg.k_spread).max(cfg.min_approach);
    if n >= 2 {
        // keep adjacent chords at least two safety radii long
        r.max(safety_radius / (PI / n as f64).sin())
    } else {
        r
    }
}

/// Places the robots, sorted by id, on equally spaced slots of a circle
/// around `target`, each facing the target. Input order does not matter.
pub fn allocate_safe_positions<I, S>(
    target: Point2D,
    robots: I,
    safety_radius: f64,
    cfg: &AllocationConfig,
) -> BTreeMap<String, Pose2D>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut ids: Vec<String> = robots.into_iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    let r = slot_radius(n, safety_radius, cfg);
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| {
            let a = TAU * i as f64 / n as f64;
            let p = target.offset(a, r);
            (id, Pose2D::new(p.x, p.y, a + PI))
        })
        .collect()
}
