use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lgq_cli::config::ScenarioConfig;
use lgq_cli::{oracle, pipeline, presets, CliError, EXIT_ORACLE_FAILURE};

/// Classical and quantum linear-Gaussian state estimation runner.
#[derive(Parser)]
#[command(name = "lgq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and write trajectory CSV, steady-state
    /// report and manifest.
    Run {
        /// Path to the scenario config (JSON).
        config: PathBuf,
    },
    /// Evaluate the steady-state differentiability condition.
    Analyze {
        /// Path to the scenario config (JSON).
        config: PathBuf,
        /// Sweep the preset coupling ratio, e.g. `g=0.5:1.5:0.1`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Run the cross-route oracle battery and print a JSON report.
    Oracle {
        /// Random models per battery.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Grid step (battery tolerances scale with dt / 1e-4).
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
    },
    /// Preset utilities.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List bundled scenario presets.
    List,
}

fn load_config(path: &PathBuf) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text)
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { config } => {
            let scenario = load_config(&config)?.resolve()?;
            let manifest = pipeline::run_scenario(&scenario)?;
            if let Some(csv) = &manifest.outputs.trajectory_csv {
                println!("trajectory: {}", csv.display());
            }
            if let Some(report) = &manifest.outputs.report_json {
                println!("report:     {}", report.display());
            }
            println!("manifest:   {}", manifest.outputs.manifest_json.display());
            Ok(0)
        }
        Command::Analyze { config, sweep } => {
            let config = load_config(&config)?;
            let reports = pipeline::analyze(&config, sweep.as_deref())?;
            let json = if reports.len() == 1 {
                serde_json::to_string_pretty(&reports[0])
            } else {
                serde_json::to_string_pretty(&reports)
            }
            .expect("report serializes");
            println!("{json}");
            Ok(0)
        }
        Command::Oracle { seeds, dt } => {
            let report = oracle::oracle_suite(seeds, dt)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(if report.all_pass { 0 } else { EXIT_ORACLE_FAILURE })
        }
        Command::Presets { action: PresetAction::List } => {
            for (name, description) in presets::catalogue() {
                println!("{name}\n    {description}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
