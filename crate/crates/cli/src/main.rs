use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use sonoswarm_cli::commands::{self, CliError, RunArgs};
use sonoswarm_cli::service::{self, LiveConfig, LiveSim};
use sonoswarm_core::nl_parse::ParseError;
use sonoswarm_core::robot_sim::Arena;

#[derive(Parser)]
#[command(name = "sonoswarm", version, about = "Multi-robot acoustic levitation simulator")]
struct Cli {
    /// Simulation config JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over several seeds and write traces and metrics.
    Run {
        /// sequential, parallel, synchronous (or 1-3), or a scenario JSON file.
        #[arg(long)]
        scenario: String,
        /// Use seeds 0..n.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        fault_drop: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sample |P| along a line and print CSV.
    Scan {
        #[arg(long)]
        array: PathBuf,
        /// x1,y1,z1,x2,y2,z2 in metres.
        #[arg(long, allow_hyphen_values = true)]
        line: String,
        #[arg(long, default_value_t = 101)]
        n: usize,
    },
    /// Serve the live simulation over HTTP and websocket.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        arena: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Parse one command and print its plan JSON.
    Parse {
        #[arg(long)]
        text: String,
    },
    /// Print the effective configuration as JSON.
    Config,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Parse(ParseError::Failed(f)) = &e {
                for (i, a) in f.attempts.iter().enumerate() {
                    eprintln!("  attempt {} at temperature {}: {}", i + 1, a.temperature, a.errors.join("; "));
                }
            }
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Run {
            scenario,
            seeds,
            fault_drop,
            out,
        } => {
            let report = commands::run(&RunArgs {
                scenario: &scenario,
                seeds,
                fault_drop,
                config,
                out: &out,
            })?;
            let mut w = std::io::stdout().lock();
            for (mode, m) in &report.modes {
                writeln!(w, "{mode}: {}/{} plans succeeded ({:.1}%)", m.successes, m.plans, m.success_rate)?;
            }
            if let Some(l) = report.mean_coordination_latency {
                writeln!(w, "mean coordination latency: {l:.3} s")?;
            }
            writeln!(w, "wrote {}", out.join("metrics.json").display())?;
        }
        Command::Scan { array, line, n } => {
            commands::scan(&array, &line, n, std::io::stdout().lock())?;
        }
        Command::Serve {
            port,
            arena,
            seed,
            speed,
        } => {
            let mut sim = commands::load_config(config)?;
            if let Some(path) = arena {
                let text = std::fs::read_to_string(&path).map_err(|source| CliError::Read {
                    path: path.display().to_string(),
                    source,
                })?;
                sim.arena = serde_json::from_str::<Arena>(&text).map_err(|source| CliError::Json {
                    path: path.display().to_string(),
                    source,
                })?;
                sim.roster.clear();
                sim.validate()?;
            }
            if !(speed > 0.0) {
                return Err(CliError::Usage("--speed must be positive".into()));
            }
            let backend = commands::backend_for(&sim)?;
            let live = LiveSim::start(
                LiveConfig {
                    seed,
                    speed,
                    ..LiveConfig::new(sim)
                },
                Some(backend),
            )?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(service::serve(SocketAddr::from(([0, 0, 0, 0], port)), Arc::new(live)))?;
        }
        Command::Parse { text } => {
            let cfg = commands::load_config(config)?;
            let backend = commands::backend_for(&cfg)?;
            let plan = commands::parse(&text, &cfg, backend.as_ref())?;
            let text = serde_json::to_string_pretty(&plan.to_value()).expect("plan serializes");
            writeln!(std::io::stdout().lock(), "{text}")?;
        }
        Command::Config => {
            let cfg = commands::load_config(config)?;
            let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
            writeln!(std::io::stdout().lock(), "{text}")?;
        }
    }
    Ok(())
}
