//! Batch subcommands: scenario runs, field scans and one-off parses.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use sonoswarm_core::acoustics::{line_scan, scan_rows, ArrayFile, Point3};
use sonoswarm_core::harness::{run_scenario_to_dir, MetricsReport, ScenarioId, ScenarioSpec, SimConfig};
use sonoswarm_core::nl_parse::{parse_command, ParseError, ParserBackend, ReferenceBackend};
use sonoswarm_core::task_model::TaskPlan;
use thiserror::Error;

use crate::llm::HttpBackend;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] sonoswarm_core::harness::ScenarioError),
    #[error(transparent)]
    Config(#[from] sonoswarm_core::harness::ConfigError),
    #[error(transparent)]
    Acoustics(#[from] sonoswarm_core::acoustics::AcousticsError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Backend(#[from] sonoswarm_core::nl_parse::BackendError),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid JSON in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_config(path: Option<&Path>) -> Result<SimConfig, CliError> {
    Ok(match path {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    })
}

/// Parses `x1,y1,z1,x2,y2,z2`.
pub fn parse_line(spec: &str) -> Result<(Point3, Point3), CliError> {
    let v: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("bad --line {spec:?}: {e}")))?;
    if v.len() != 6 {
        return Err(CliError::Usage(format!("--line needs 6 numbers, got {}", v.len())));
    }
    Ok((Point3::new(v[0], v[1], v[2]), Point3::new(v[3], v[4], v[5])))
}

pub struct RunArgs<'a> {
    pub scenario: &'a str,
    pub seeds: Option<u64>,
    pub fault_drop: Option<f64>,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
}

/// A preset id (or 1-3), or a path to a scenario JSON file.
pub fn run(args: &RunArgs<'_>) -> Result<MetricsReport, CliError> {
    let mut spec = match ScenarioId::parse(args.scenario).filter(|id| id.command().is_some()) {
        Some(id) => {
            let mut spec = ScenarioSpec::preset(id, vec![0]);
            spec.config = load_config(args.config)?;
            spec
        }
        None => {
            let mut spec: ScenarioSpec = read_json(Path::new(args.scenario))?;
            if let Some(c) = args.config {
                spec.config = SimConfig::load(c)?;
            }
            spec
        }
    };
    if let Some(n) = args.seeds {
        spec = spec.with_seeds((0..n).collect());
    }
    if let Some(p) = args.fault_drop {
        spec.config.faults.drop_prob = p;
    }
    Ok(run_scenario_to_dir(&spec, args.out)?)
}

/// Writes the scan as CSV.
pub fn scan<W: Write>(array_file: &Path, line: &str, n: usize, out: W) -> Result<usize, CliError> {
    let file: ArrayFile = read_json(array_file)?;
    let arrays = file.build()?;
    let (start, end) = parse_line(line)?;
    let samples = line_scan(&arrays, start, end, n)?;
    let mut w = csv::Writer::from_writer(out);
    for row in scan_rows(&samples, start) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(samples.len())
}

/// The hosted backend when its endpoint is set, otherwise the reference grammar.
pub fn backend_for(cfg: &SimConfig) -> Result<Arc<dyn ParserBackend + Send + Sync>, CliError> {
    if let Some(b) = HttpBackend::from_env() {
        return Ok(Arc::new(b?));
    }
    let poses = cfg.arena.robots.iter().map(|(k, v)| (k.clone(), *v)).collect();
    Ok(Arc::new(ReferenceBackend::new(cfg.arena.spatial_context(&poses), cfg.roster())))
}

pub fn parse(text: &str, cfg: &SimConfig, backend: &dyn ParserBackend) -> Result<TaskPlan, CliError> {
    let poses = cfg.arena.robots.iter().map(|(k, v)| (k.clone(), *v)).collect();
    let ctx = cfg.arena.spatial_context(&poses);
    Ok(parse_command(text, backend, &cfg.parse_config()?, &ctx, &cfg.roster())?)
}
