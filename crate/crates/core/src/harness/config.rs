//! Simulation configuration, loadable from one JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acoustics::ArrayFile;
use crate::coordination::{ProtocolConfig, TimeoutConfig};
use crate::nl_parse::{ConfigError as ParseConfigError, ParseConfig};
use crate::robot_sim::arena::ArenaError;
use crate::robot_sim::formation::SymmetryTolerance;
use crate::robot_sim::{Arena, NominalModel, RobotTuning};
use crate::session::PhraseConfig;
use crate::task_model::Roster;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Parser(#[from] ParseConfigError),
    #[error("roster {roster:?} does not match the arena's robots {arena:?}")]
    Roster { roster: Vec<String>, arena: Vec<String> },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultConfig {
    pub latency_base: f64,
    /// Half-width of the uniform latency spread.
    pub latency_jitter: f64,
    pub drop_prob: f64,
    pub mocap_sigma_pos: f64,
    pub mocap_sigma_ang: f64,
    /// Each robot's clock runs ahead of global time by a fixed offset drawn
    /// uniformly from [0, clock_offset_max].
    pub clock_offset_max: f64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self {
            latency_base: 0.02,
            latency_jitter: 0.0,
            drop_prob: 0.0,
            mocap_sigma_pos: 0.001,
            mocap_sigma_ang: 0.002,
            clock_offset_max: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParserSection {
    pub temperature_schedule: Vec<f64>,
    pub max_attempts: u32,
    /// Replaces the built-in prompt when set.
    pub prompt_file: Option<String>,
}

impl Default for ParserSection {
    fn default() -> Self {
        let d = ParseConfig::default();
        Self {
            temperature_schedule: d.temperature_schedule,
            max_attempts: d.max_attempts,
            prompt_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub pos_tol: f64,
    pub ang_tol: f64,
    pub formation_ang_tol: f64,
    pub symmetry: SymmetryTolerance,
    /// Allowed spacing deviation during synchronized transport.
    pub sync_spacing: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = crate::robot_sim::ControllerConfig::default();
        Self {
            pos_tol: c.pos_tol,
            ang_tol: c.ang_tol,
            formation_ang_tol: c.formation_ang_tol,
            symmetry: SymmetryTolerance::default(),
            sync_spacing: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoordinationSection {
    pub protocol: ProtocolConfig,
    pub timeouts: TimeoutConfig,
    pub nominal: NominalModel,
}

impl Default for CoordinationSection {
    fn default() -> Self {
        Self {
            protocol: ProtocolConfig::default(),
            timeouts: TimeoutConfig::default(),
            nominal: NominalModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Spacing of pose frames in the trace.
    pub frame_interval: f64,
    /// Global run timeout in simulated seconds.
    pub max_time: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            frame_interval: 0.05,
            max_time: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SimConfig {
    /// Robot ids; empty means every robot in the arena.
    pub roster: Vec<String>,
    pub arena: Arena,
    pub faults: FaultConfig,
    pub parser: ParserSection,
    pub acoustics: Option<ArrayFile>,
    pub tolerances: Tolerances,
    pub robot: RobotTuning,
    pub coordination: CoordinationSection,
    pub session: PhraseConfig,
    pub sim: SimParams,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn roster(&self) -> Roster {
        let ids: Vec<String> = if self.roster.is_empty() {
            self.arena.robots.keys().cloned().collect()
        } else {
            self.roster.clone()
        };
        Roster::new(ids)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.arena.validate()?;
        if !self.roster.is_empty() {
            let mut r = self.roster.clone();
            r.sort();
            let arena: Vec<String> = self.arena.robots.keys().cloned().collect();
            if r != arena {
                return Err(ConfigError::Roster { roster: r, arena });
            }
        }
        self.parse_config_unchecked().check()?;
        let f = &self.faults;
        if !(0.0..=1.0).contains(&f.drop_prob) {
            return Err(ConfigError::Invalid(format!("drop_prob {} is outside [0, 1]", f.drop_prob)));
        }
        if f.latency_base < 0.0 || f.latency_jitter < 0.0 || f.clock_offset_max < 0.0 {
            return Err(ConfigError::Invalid("latencies and clock offsets must be non-negative".into()));
        }
        if self.sim.frame_interval <= 0.0 || self.sim.max_time <= 0.0 {
            return Err(ConfigError::Invalid("frame_interval and max_time must be positive".into()));
        }
        if self.robot.control_dt <= 0.0 {
            return Err(ConfigError::Invalid("control_dt must be positive".into()));
        }
        Ok(())
    }

    fn parse_config_unchecked(&self) -> ParseConfig {
        ParseConfig {
            temperature_schedule: self.parser.temperature_schedule.clone(),
            max_attempts: self.parser.max_attempts,
            ..ParseConfig::default()
        }
    }

    pub fn parse_config(&self) -> Result<ParseConfig, ConfigError> {
        let mut cfg = self.parse_config_unchecked();
        if let Some(path) = &self.parser.prompt_file {
            cfg.prompt_template = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    /// Robot tuning with the fault and tolerance sections applied.
    pub fn effective_tuning(&self) -> RobotTuning {
        let mut t = self.robot;
        t.mocap.sigma_pos = self.faults.mocap_sigma_pos;
        t.mocap.sigma_ang = self.faults.mocap_sigma_ang;
        t.controller.pos_tol = self.tolerances.pos_tol;
        t.controller.stop_tol = t.controller.stop_tol.min(self.tolerances.pos_tol / 2.0);
        t.controller.ang_tol = self.tolerances.ang_tol;
        t.controller.formation_ang_tol = self.tolerances.formation_ang_tol;
        t.symmetry = self.tolerances.symmetry;
        t
    }
}
