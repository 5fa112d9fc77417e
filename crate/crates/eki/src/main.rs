use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eki::commands;
use eki::{CliError, Overrides, RunConfig};
use eki_core::imaging::Metric;

#[derive(Parser)]
#[command(
    name = "eki",
    version,
    about = "Ensemble Kalman inversion of rod material parameters from images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file (a previous manifest also works).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_metric)]
    metric: Option<Metric>,
    #[arg(long, global = true)]
    sigma: Option<u32>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the rod at the configured parameters and write the image chain.
    Forward,
    /// Run the full-data EKI flow.
    Invert,
    /// Run the subsampled EKI flow over horizontal image bands.
    InvertSub,
    /// Fit the residual decay rate of a trajectory and compare runs.
    Diagnose,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse::<Metric>().map_err(|e| e.to_string())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
        metric: cli.metric,
        sigma: cli.sigma,
    });
    eki::parallel::init_workers(cfg.workers);
    match cli.command {
        Command::Forward => {
            let s = commands::cmd_forward(&cfg)?;
            println!("wrote {} files to {}", s.files.len(), cfg.out.display());
        }
        Command::Invert | Command::InvertSub => {
            let o = if matches!(cli.command, Command::Invert) {
                commands::cmd_invert(&cfg)?
            } else {
                commands::cmd_invert_subsampled(&cfg)?
            };
            println!(
                "estimate density = {:.6e}, youngs_modulus = {:.6e}",
                o.physical[0], o.physical[1]
            );
        }
        Command::Diagnose => {
            let s = commands::cmd_diagnose(&cfg)?;
            println!("rate = {:.4}, r^2 = {:.4}", s.rate, s.r_squared);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
