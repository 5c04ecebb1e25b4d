//! Scenario presets and the batch runner.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, SimConfig};
use super::metrics::{MetricsReport, RunOutcome};
use super::world::World;

pub const WAKE_TIME: f64 = 0.0;
pub const COMMAND_TIME: f64 = 1.0;

pub const SEQUENTIAL_COMMAND: &str = "robot one transport object A to station one then transport object B to station two";
pub const PARALLEL_COMMAND: &str =
    "robot one transport object A to station one and robot two transport object B to station two";
pub const SYNCHRONOUS_COMMAND: &str = "both robots carry object C to the dock together";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    Sequential,
    Parallel,
    Synchronous,
    Custom,
}

impl ScenarioId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::Sequential => "sequential",
            ScenarioId::Parallel => "parallel",
            ScenarioId::Synchronous => "synchronous",
            ScenarioId::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sequential" | "1" => Some(ScenarioId::Sequential),
            "parallel" | "2" => Some(ScenarioId::Parallel),
            "synchronous" | "3" => Some(ScenarioId::Synchronous),
            "custom" => Some(ScenarioId::Custom),
            _ => None,
        }
    }

    pub fn command(&self) -> Option<&'static str> {
        match self {
            ScenarioId::Sequential => Some(SEQUENTIAL_COMMAND),
            ScenarioId::Parallel => Some(PARALLEL_COMMAND),
            ScenarioId::Synchronous => Some(SYNCHRONOUS_COMMAND),
            ScenarioId::Custom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub t: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub script: Vec<ScriptLine>,
    #[serde(default)]
    pub config: SimConfig,
    pub seeds: Vec<u64>,
    pub repetitions: usize,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("repetitions must be at least 1 and equal the number of seeds ({seeds}), got {repetitions}")]
    Repetitions { repetitions: usize, seeds: usize },
    #[error("script is empty")]
    EmptyScript,
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl ScenarioSpec {
    /// One of the three presets: wake phrase at t=0, command at t=1.
    pub fn preset(id: ScenarioId, seeds: Vec<u64>) -> Self {
        let script = match id.command() {
            Some(cmd) => vec![
                ScriptLine {
                    t: WAKE_TIME,
                    text: "open robot system".into(),
                },
                ScriptLine {
                    t: COMMAND_TIME,
                    text: cmd.into(),
                },
            ],
            None => Vec::new(),
        };
        Self {
            id,
            script,
            config: SimConfig::default(),
            repetitions: seeds.len(),
            seeds,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.repetitions < 1 || self.repetitions != self.seeds.len() {
            return Err(ScenarioError::Repetitions {
                repetitions: self.repetitions,
                seeds: self.seeds.len(),
            });
        }
        if self.script.is_empty() {
            return Err(ScenarioError::EmptyScript);
        }
        self.config.validate()?;
        Ok(())
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.repetitions = seeds.len();
        self.seeds = seeds;
        self
    }
}

/// Builds the world for one seed and feeds it the script.
pub fn build_world(spec: &ScenarioSpec, seed: u64) -> Result<World, ScenarioError> {
    let mut world = World::new(&spec.config, seed)?;
    for line in &spec.script {
        world.schedule_transcript(line.t, &line.text);
    }
    Ok(world)
}

/// Runs one seed to quiescence or timeout and returns the finished world.
pub fn run_seed(spec: &ScenarioSpec, seed: u64) -> Result<(RunOutcome, World), ScenarioError> {
    let mut world = build_world(spec, seed)?;
    world.run_to_quiescence();
    Ok((world.outcome(), world))
}

pub fn run_scenario(spec: &ScenarioSpec) -> Result<MetricsReport, ScenarioError> {
    run_scenario_with(spec, |_, _| Ok(()))
}

/// Like [`run_scenario`], handing each finished world to `visit`.
pub fn run_scenario_with<F>(spec: &ScenarioSpec, mut visit: F) -> Result<MetricsReport, ScenarioError>
where
    F: FnMut(u64, &World) -> Result<(), ScenarioError>,
{
    spec.validate()?;
    let mut outcomes = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let (outcome, world) = run_seed(spec, seed)?;
        visit(seed, &world)?;
        outcomes.push(outcome);
    }
    Ok(MetricsReport::aggregate(spec.id.as_str(), outcomes))
}

fn write(path: &Path, text: &str) -> Result<(), ScenarioError> {
    std::fs::write(path, text).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Runs the scenario and writes `metrics.json` plus one trace and one
/// message log per seed into `dir`.
pub fn run_scenario_to_dir(spec: &ScenarioSpec, dir: &Path) -> Result<MetricsReport, ScenarioError> {
    std::fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let name = spec.id.as_str();
    let report = run_scenario_with(spec, |seed, world| {
        write(&dir.join(format!("trace_{name}_{seed}.jsonl")), &world.trace().to_jsonl())?;
        write(&dir.join(format!("messages_{name}_{seed}.jsonl")), &world.bus().log_jsonl())
    })?;
    write(&dir.join("metrics.json"), &report.to_json())?;
    Ok(report)
}
