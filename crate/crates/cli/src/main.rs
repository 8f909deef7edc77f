//! scoutsim: run scout/task ISR scenarios, validate configs, render plots
//! and sweep parameters.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 runtime failure.

mod plot;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scoutsim_core::engine::{self, parse_scenario, ScenarioConfig};
use scoutsim_core::posegraph::write_g2o;

#[derive(Parser)]
#[command(name = "scoutsim", about = "Decentralised multi-robot ISR simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write metrics, events, summary and final state.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's tick budget.
        #[arg(long)]
        ticks: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Parse and validate a scenario file.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Render SVG plots from a previous run's outputs.
    Plot {
        /// Scenario file (for the obstacle map and target markers).
        #[arg(long)]
        scenario: PathBuf,
        /// Directory holding metrics.csv and summary.json; SVGs land here.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated plot kinds: entropy, confirmations, trajectories.
        #[arg(long, default_value = "entropy,confirmations,trajectories")]
        plots: String,
    },
    /// Run a scenario across an axis of values times a seed set and
    /// aggregate the summaries into one CSV.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Axis declaration, e.g. delta=0.05,0.1,0.2 or drop_prob=0,0.3 or
        /// failure_rate=0,0.5.
        #[arg(long)]
        sweep: String,
        /// First seed of the seed set.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of seeds per axis value.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

enum CliError {
    /// Bad usage or configuration: exit 2.
    Config(String),
    /// Failure during execution: exit 3.
    Runtime(String),
}

fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_scenario(&text, &name)
        .map_err(|e| CliError::Config(format!("{}:{e}", path.display())))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            ticks,
            out,
        } => cmd_run(&scenario, seed, ticks, &out),
        Command::Validate { scenario } => {
            let cfg = load(&scenario)?;
            println!(
                "{}: ok ({} robots, {} targets, {}x{} world)",
                scenario.display(),
                cfg.robots.len(),
                cfg.world.targets().len(),
                cfg.world.width(),
                cfg.world.height()
            );
            Ok(())
        }
        Command::Plot {
            scenario,
            out,
            plots,
        } => plot::cmd_plot(&scenario, &out, &plots),
        Command::Sweep {
            scenario,
            sweep,
            seed,
            seeds,
            out,
        } => sweep::cmd_sweep(&scenario, &sweep, seed, seeds, &out),
    }
}

fn cmd_run(
    scenario: &Path,
    seed: Option<u64>,
    ticks: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut cfg = load(scenario)?;
    if let Some(seed) = seed {
        cfg.engine.seed = seed;
    }
    if let Some(ticks) = ticks {
        cfg.engine.ticks = ticks;
    }

    let outcome = engine::run(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;

    fs::create_dir_all(out).map_err(|e| CliError::Config(format!("{}: {e}", out.display())))?;
    let write_err = |what: &str, e: std::io::Error| {
        CliError::Runtime(format!("writing {what}: {e}"))
    };

    let mut csv = Vec::new();
    engine::write_metrics_csv(&outcome.metrics, &mut csv).map_err(|e| write_err("metrics", e))?;
    fs::write(out.join("metrics.csv"), csv).map_err(|e| write_err("metrics.csv", e))?;

    let mut events = Vec::new();
    engine::write_events_jsonl(&outcome.events, &mut events)
        .map_err(|e| write_err("events", e))?;
    fs::write(out.join("events.jsonl"), events).map_err(|e| write_err("events.jsonl", e))?;

    let summary = serde_json::to_string_pretty(&outcome.summary)
        .map_err(|e| CliError::Runtime(format!("summary: {e}")))?;
    fs::write(out.join("summary.json"), summary).map_err(|e| write_err("summary.json", e))?;

    // Final state: per-robot pose graph (g2o) and belief snapshot (CSV and
    // row-major f32).
    let sim = &outcome.simulation;
    for i in 0..sim.n_robots() {
        let mut buf = Vec::new();
        write_g2o(sim.graph_of(i), &mut buf).map_err(|e| write_err("graph", e))?;
        fs::write(out.join(format!("graph_r{i}.g2o")), buf)
            .map_err(|e| write_err("graph.g2o", e))?;

        let mut belief_csv = Vec::new();
        sim.belief_of(i)
            .write_csv(&mut belief_csv)
            .map_err(|e| write_err("belief", e))?;
        fs::write(out.join(format!("belief_r{i}.csv")), belief_csv)
            .map_err(|e| write_err("belief.csv", e))?;
        fs::write(
            out.join(format!("belief_r{i}.f32")),
            sim.belief_of(i).to_f32_bytes(),
        )
        .map_err(|e| write_err("belief.f32", e))?;
    }

    let s = &outcome.summary;
    println!(
        "{}: {}/{} targets confirmed in {} ticks (seed {}); outputs in {}",
        s.scenario,
        s.confirmations.len(),
        s.n_targets,
        s.ticks_run,
        s.seed,
        out.display()
    );
    for c in &s.confirmations {
        println!("  target {} confirmed at tick {} by robot {}", c.target, c.tick, c.by);
    }
    Ok(())
}
