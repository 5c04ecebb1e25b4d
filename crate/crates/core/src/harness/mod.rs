//! Batch and live simulation: configuration, the event-driven world,
//! scenario presets, traces and metrics.

pub mod config;
pub mod metrics;
pub mod scenario;
pub mod trace;
pub mod world;

pub use config::{ConfigError, FaultConfig, SimConfig};
pub use metrics::{CommandRecord, MetricsReport, RunOutcome};
pub use scenario::{run_scenario, run_scenario_to_dir, run_seed, ScenarioError, ScenarioId, ScenarioSpec, ScriptLine};
pub use trace::{Trace, TraceRecord};
pub use world::{World, WorldSnapshot, SCHEDULER};
