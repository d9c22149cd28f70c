use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use vanetloc_cli::commands::{cmd_drive, cmd_fit, cmd_survey, cmd_sweep, parse_hidden_range};
use vanetloc_cli::config::ScenarioConfig;
use vanetloc_cli::HarnessError;

#[derive(Parser)]
#[command(name = "vanetloc", version, about = "RSS positioning experiments for road-side unit deployments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a calibration survey and write it as CSV.
    Survey {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the RSS → distance quartic for one RSU of a survey.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rsu: String,
        #[arg(long = "min-distance", default_value_t = 60.0)]
        min_distance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train networks over hidden sizes × seeds and rank them.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "2..10")]
        hidden: String,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Takes training settings from the config's network estimator.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive the lane once and write the fix trace.
    Drive {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the summary as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Survey { config, seed, out: path } => {
            cmd_survey(&ScenarioConfig::load(&config)?, seed, &path, &mut out)?;
        }
        Command::Fit { input, rsu, min_distance, out: path } => {
            cmd_fit(&input, &rsu, min_distance, &path, &mut out)?;
        }
        Command::Sweep { input, hidden, seeds, config, out: path } => {
            let hidden = parse_hidden_range(&hidden)?;
            let train = match config {
                Some(p) => ScenarioConfig::load(&p)?.estimator.train_config(),
                None => ScenarioConfig::default().estimator.train_config(),
            };
            cmd_sweep(&input, hidden, seeds, train, &path, &mut out)?;
        }
        Command::Drive { config, seed, out: path, summary } => {
            let mut config = ScenarioConfig::load(&config)?;
            if let Some(seed) = seed {
                config.scenario.seed = seed;
            }
            let run = cmd_drive(&config, &path, &mut out)?;
            if let Some(p) = summary {
                let text = serde_json::to_string_pretty(&run.summary).map_err(|e| HarnessError::Data(e.to_string()))?;
                std::fs::write(&p, text + "\n").map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
