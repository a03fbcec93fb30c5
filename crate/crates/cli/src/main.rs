use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sigma_cli::{experiments, ExperimentConfig, Outputs};

#[derive(Parser)]
#[command(name = "sigma", version, about = "Sigma-point filtering, smoothing and parameter estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run only this rule (e.g. `sym5`, `gh(3)`, `ut(1,0,0)`, `ekf`).
    #[arg(long, global = true)]
    rule: Option<String>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate trajectories.
    Simulate,
    /// Filtered means and covariances.
    Filter,
    /// Smoothed means and covariances.
    Smooth,
    /// Log-likelihood over a one-parameter grid.
    LikelihoodGrid,
    /// Maximum-likelihood estimates per trajectory and rule.
    Mle,
    /// EM parameter traces.
    Em,
    /// Location RMSE of the smoother at estimated parameters.
    TrackRmse,
}

fn run(cli: &Cli) -> Result<Outputs> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(r) = &cli.rule {
        cfg.rules = vec![r.clone()];
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Simulate => experiments::simulate(&cfg),
        Command::Filter => experiments::filter(&cfg),
        Command::Smooth => experiments::smooth(&cfg),
        Command::LikelihoodGrid => experiments::likelihood_grid(&cfg),
        Command::Mle => experiments::mle(&cfg),
        Command::Em => experiments::em(&cfg),
        Command::TrackRmse => experiments::track_rmse(&cfg),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring the thread pool")?;
    }
    let out = run(&cli)?;
    out.write(&cli.out)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let files = out.tables.len() + out.json.len();
    eprintln!("wrote {files} file{} to {}", if files == 1 { "" } else { "s" }, cli.out.display());
    Ok(())
}
