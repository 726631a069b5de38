//! Command-line driver for the glacier hydraulic-fracture simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crevasse::scenario::config::{parse_config, ScenarioConfig, TemperatureSpec};
use crevasse::scenario::runner::run_scenario;
use crevasse::solver::system::Rheology;
use crevasse::SimError;

#[derive(Parser, Debug)]
#[command(
    name = "crevasse",
    about = "Simulates hydraulic fracture of a water-filled crevasse through an idealised glacier"
)]
struct Cli {
    /// Scenario configuration file (key = value lines); defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Ice rheology.
    #[arg(long, value_parser = ["elastic", "viscoelastic"])]
    rheology: Option<String>,

    /// Ice thickness, m.
    #[arg(long)]
    thickness: Option<f64>,

    /// Constant ice temperature, degC.
    #[arg(long, conflicts_with = "temperature_profile")]
    temperature: Option<f64>,

    /// File with a depth/temperature profile.
    #[arg(long)]
    temperature_profile: Option<PathBuf>,

    /// Time increment, s.
    #[arg(long)]
    dt: Option<f64>,

    /// Simulated duration, s.
    #[arg(long)]
    duration: Option<f64>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write a snapshot every N increments (0 disables).
    #[arg(long)]
    snapshot_stride: Option<usize>,

    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn build_config(cli: &Cli) -> Result<ScenarioConfig, SimError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
            parse_config(&text)?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(r) = &cli.rheology {
        cfg.rheology = match r.as_str() {
            "elastic" => Rheology::Elastic,
            _ => Rheology::Viscoelastic,
        };
    }
    if let Some(h) = cli.thickness {
        if h <= 0.0 {
            return Err(SimError::Domain(format!(
                "--thickness must be positive, got {h}"
            )));
        }
        cfg.domain.ice_thickness = h;
    }
    if let Some(t) = cli.temperature {
        if t > 0.0 {
            return Err(SimError::Domain(format!(
                "--temperature: ice cannot be warmer than 0 degC, got {t}"
            )));
        }
        cfg.temperature = TemperatureSpec::Constant(t);
    }
    if let Some(path) = &cli.temperature_profile {
        cfg.temperature = TemperatureSpec::ProfileFile(path.clone());
    }
    if let Some(dt) = cli.dt {
        if dt <= 0.0 {
            return Err(SimError::Domain(format!("--dt must be positive, got {dt}")));
        }
        cfg.dt = dt;
    }
    if let Some(d) = cli.duration {
        if d <= 0.0 {
            return Err(SimError::Domain(format!(
                "--duration must be positive, got {d}"
            )));
        }
        cfg.duration = d;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(s) = cli.snapshot_stride {
        cfg.snapshot_stride = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_scenario(&cfg, !cli.quiet) {
        Ok(outcome) => {
            if !cli.quiet {
                eprintln!(
                    "finished at t = {:.1} s: crevasse {:.1} m, basal arms {:.1}/{:.1} m, \
                     Q = {:.1} m^3/m",
                    outcome.state.time,
                    outcome.rows.last().map(|r| r.crevasse_depth_m).unwrap_or(0.0),
                    outcome.rows.last().map(|r| r.crack_left_m).unwrap_or(0.0),
                    outcome.rows.last().map(|r| r.crack_right_m).unwrap_or(0.0),
                    outcome.state.q_total
                );
            }
            ExitCode::SUCCESS
        }
        Err(e @ (SimError::Config { .. } | SimError::Domain(_))) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("solver failure: {e}");
            ExitCode::from(3)
        }
    }
}
