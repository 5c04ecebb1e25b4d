//! Motion-capture measurements and the pose filter that fuses them with
//! dead reckoning.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dynamics::{integrate_pose, Command};
use crate::geometry::{angle_diff, normalize_angle, Pose2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MocapConfig {
    pub sigma_pos: f64,
    pub sigma_ang: f64,
    /// Weight given to each new measurement by the pose filter.
    pub alpha: f64,
}

impl Default for MocapConfig {
    fn default() -> Self {
        Self {
            sigma_pos: 0.001,
            sigma_ang: 0.002,
            alpha: 0.3,
        }
    }
}

/// A noisy observation of `truth`. Always consumes three normal draws.
pub fn mocap_sample<R: Rng + ?Sized>(truth: Pose2D, cfg: &MocapConfig, rng: &mut R) -> Pose2D {
    let nx: f64 = rng.sample(StandardNormal);
    let ny: f64 = rng.sample(StandardNormal);
    let nt: f64 = rng.sample(StandardNormal);
    Pose2D {
        x: truth.x + cfg.sigma_pos * nx,
        y: truth.y + cfg.sigma_pos * ny,
        theta: normalize_angle(truth.theta + cfg.sigma_ang * nt),
    }
}

/// Complementary filter: predict with the commanded velocity, then pull the
/// prediction toward the measurement by `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFilter {
    pub estimate: Pose2D,
    pub alpha: f64,
}

impl PoseFilter {
    pub fn new(initial: Pose2D, alpha: f64) -> Self {
        Self { estimate: initial, alpha }
    }

    pub fn predict(&mut self, cmd: Command, dt: f64) {
        if dt > 0.0 {
            self.estimate = integrate_pose(self.estimate, cmd, dt);
        }
    }

    pub fn correct(&mut self, measured: Pose2D) {
        let e = self.estimate;
        let a = self.alpha;
        self.estimate = Pose2D {
            x: e.x + a * (measured.x - e.x),
            y: e.y + a * (measured.y - e.y),
            theta: normalize_angle(e.theta + a * angle_diff(measured.theta, e.theta)),
        };
    }
}
