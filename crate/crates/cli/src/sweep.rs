//! Parameter sweep: run a scenario per axis value and seed, aggregate the
//! summaries into one CSV.

use std::fmt::Write as FmtWrite;
use std::fs;
use std::path::Path;

use crate::{load, CliError};
use scoutsim_core::engine;

/// Supported axes and how they apply to a config.
fn apply_axis(
    cfg: &mut engine::ScenarioConfig,
    axis: &str,
    value: f64,
) -> Result<(), CliError> {
    match axis {
        "delta" => {
            cfg.planner.delta = value;
            cfg.planner
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))
        }
        "drop_prob" => {
            if !(0.0..=1.0).contains(&value) {
                return Err(CliError::Config(format!("drop_prob {value} out of [0,1]")));
            }
            cfg.comms.default.drop_prob = value;
            Ok(())
        }
        "failure_rate" => {
            if !(0.0..=1.0).contains(&value) {
                return Err(CliError::Config(format!("failure_rate {value} out of [0,1]")));
            }
            cfg.engine.failure_rate = value;
            Ok(())
        }
        other => Err(CliError::Config(format!(
            "unknown sweep axis '{other}' (delta | drop_prob | failure_rate)"
        ))),
    }
}

pub fn cmd_sweep(
    scenario: &Path,
    sweep: &str,
    seed0: u64,
    n_seeds: u64,
    out: &Path,
) -> Result<(), CliError> {
    let (axis, values_str) = sweep
        .split_once('=')
        .ok_or_else(|| CliError::Config("sweep expects AXIS=V1,V2,...".into()))?;
    let values: Vec<f64> = values_str
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("invalid sweep value '{v}'")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() || n_seeds == 0 {
        return Err(CliError::Config("empty sweep axis or seed set".into()));
    }

    let mut csv = String::from(
        "axis,value,seed,ticks_run,confirmed,n_targets,all_confirmed,first_confirm_tick,last_confirm_tick,revalidated,msgs_sent,msgs_delivered,msgs_dropped,mean_final_entropy_bits\n",
    );
    for &value in &values {
        for s in 0..n_seeds {
            let seed = seed0 + s;
            let mut cfg = load(scenario)?;
            apply_axis(&mut cfg, axis.trim(), value)?;
            cfg.engine.seed = seed;
            let outcome = engine::run(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            let sm = &outcome.summary;
            let first = sm.confirmations.iter().map(|c| c.tick).min();
            let last = sm.confirmations.iter().map(|c| c.tick).max();
            let mean_entropy = if sm.final_entropy_bits.is_empty() {
                0.0
            } else {
                sm.final_entropy_bits.iter().map(|(_, h)| h).sum::<f64>()
                    / sm.final_entropy_bits.len() as f64
            };
            let _ = writeln!(
                csv,
                "{axis},{value},{seed},{},{},{},{},{},{},{},{},{},{},{}",
                sm.ticks_run,
                sm.confirmations.len(),
                sm.n_targets,
                sm.all_confirmed,
                first.map(|t| t.to_string()).unwrap_or_default(),
                last.map(|t| t.to_string()).unwrap_or_default(),
                sm.revalidated.len(),
                sm.messages.sent,
                sm.messages.delivered,
                sm.messages.dropped,
                mean_entropy
            );
        }
    }

    fs::create_dir_all(out).map_err(|e| CliError::Config(format!("{}: {e}", out.display())))?;
    let path = out.join("sweep.csv");
    fs::write(&path, csv).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    println!(
        "swept {axis} over {} value(s) x {n_seeds} seed(s): {}",
        values.len(),
        path.display()
    );
    Ok(())
}
