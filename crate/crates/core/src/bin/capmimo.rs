use std::path::PathBuf;
use std::process::ExitCode;

use capmimo::scenario::{self, load_config, Scenario, Scheme};
use capmimo::{verify, Error, Result};
use clap::{Parser, Subcommand};

const DEFAULT_CONFIG: &str = include_str!("../../configs/paper_iv.toml");

#[derive(Parser)]
#[command(name = "capmimo", version, about = "Continuous-aperture MIMO pattern design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme on a scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "pdm")]
        scheme: Scheme,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Record wall-clock times in results.csv (otherwise written as 0).
        #[arg(long)]
        timing: bool,
    },
    /// Sum-rate of every scheme against aperture area.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
        areas: Vec<f64>,
        /// Number of seeds per area, counting up from the config seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        timing: bool,
    },
    /// Optimize and write per-user pattern grids.
    ExportPatterns {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the numerical oracle suite and print a JSON report.
    Verify {
        /// Defaults to the bundled eight-user scenario.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn announce(paths: &[PathBuf]) {
    if let Some(first) = paths.first() {
        println!("wrote {} and {} more files", first.display(), paths.len() - 1);
    }
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            config,
            scheme,
            seed,
            out,
            timing,
        } => {
            let config = load_config(&config)?;
            let scenario = Scenario::build(&config)?;
            let result = scenario::run_experiment(&scenario, scheme, seed.unwrap_or(config.seed))?;
            println!(
                "{} area {} m^2 seed {}: {} bits/s/Hz after {} iterations (converged: {})",
                result.scheme, result.area_m2, result.seed, result.sum_rate, result.iterations, result.converged
            );
            announce(&scenario::export_results(&[result], &out, timing)?);
            Ok(true)
        }
        Command::Sweep {
            config,
            areas,
            seeds,
            out,
            timing,
        } => {
            let config = load_config(&config)?;
            let seeds: Vec<u64> = (0..seeds).map(|i| config.seed.wrapping_add(i)).collect();
            let results = scenario::sweep_aperture(&config, &areas, &seeds)?;
            for &area in &areas {
                for scheme in Scheme::ALL {
                    let rates: Vec<f64> = results
                        .iter()
                        .filter(|r| r.scheme == scheme && r.area_m2 == area)
                        .map(|r| r.sum_rate)
                        .collect();
                    if rates.is_empty() {
                        continue;
                    }
                    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
                    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    println!("area {area} {scheme}: mean {mean:.4} (min {lo:.4}, max {hi:.4})");
                }
            }
            announce(&scenario::export_results(&results, &out, timing)?);
            Ok(true)
        }
        Command::ExportPatterns { config, seed, out } => {
            let config = load_config(&config)?;
            let scenario = Scenario::build(&config)?;
            let result = scenario::run_experiment(&scenario, Scheme::Pdm, seed.unwrap_or(config.seed))?;
            let paths = scenario::export_patterns(&result.patterns, &scenario, &out)?;
            let overlaps = scenario::pattern_overlaps(&result.patterns, &scenario.grid, &scenario.indices)?;
            println!("mean pairwise overlap {}", scenario::mean_overlap(&overlaps));
            announce(&paths);
            Ok(true)
        }
        Command::Verify { config } => {
            let config = match config {
                Some(path) => load_config(path)?,
                None => scenario::ScenarioConfig::from_toml(DEFAULT_CONFIG)?,
            };
            let reports = verify::run_suite(&Scenario::build(&config)?)?;
            let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Numeric(e.to_string()))?;
            println!("{json}");
            Ok(reports.iter().all(|r| r.pass))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
