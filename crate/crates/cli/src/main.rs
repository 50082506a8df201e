use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mvs_portfolio::pipeline::{Pipeline, RunConfig, Stage};
use mvs_portfolio::synthetic::SyntheticMarket;

/// Prediction-based mean-variance-skewness portfolio pipeline.
#[derive(Parser)]
#[command(name = "mvs", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Plain-text `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Number of assets held.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// GA wall-clock limit in seconds.
    #[arg(long, global = true)]
    time_limit: Option<f64>,
    /// Override any config key, e.g. `--set delay=4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load prices, sample weekly and align the universe.
    Ingest {
        /// Prices file (`date,asset,close`); overrides the `prices` key.
        prices: Option<PathBuf>,
    },
    /// Train one predictor per asset.
    Predict,
    /// Build the risk model from prediction errors.
    Risk,
    /// Forecast metrics and normality tests.
    Metrics,
    /// Taguchi tuning of the GA settings.
    Tune,
    /// Optimize one portfolio at the configured lambda and theta.
    Optimize,
    /// Sweep the lambda and theta grids.
    Frontier,
    /// JSON summary of all artifacts.
    Report,
    /// Run ingest through frontier, then report.
    All {
        prices: Option<PathBuf>,
        /// Include the tuning stage.
        #[arg(long)]
        tune: bool,
    },
    /// Write a synthetic price file.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 5)]
        assets: usize,
        #[arg(long, default_value_t = 221)]
        weeks: usize,
        #[arg(long, default_value_t = 0.02)]
        missing_rate: f64,
    },
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    let flags = [
        ("seed", g.seed.map(|v| v.to_string())),
        ("out", g.out.as_ref().map(|p| p.display().to_string())),
        ("lambda", g.lambda.map(|v| v.to_string())),
        ("theta", g.theta.map(|v| v.to_string())),
        ("k", g.k.map(|v| v.to_string())),
        ("time_limit", g.time_limit.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("expected KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run_stage(p: &Pipeline, stage: Stage) -> Result<()> {
    let msg = p.run(stage).with_context(|| format!("stage `{stage}` failed"))?;
    if stage == Stage::Report {
        print!("{msg}");
    } else {
        println!("{stage}: {msg}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let stages: Vec<Stage> = match cli.command {
        Command::Synth {
            output,
            assets,
            weeks,
            missing_rate,
        } => {
            let market = SyntheticMarket {
                assets,
                weeks,
                missing_rate,
                seed: cfg.seed,
                ..SyntheticMarket::default()
            };
            let file = File::create(&output).with_context(|| format!("creating {}", output.display()))?;
            market.write_csv(BufWriter::new(file))?;
            println!("wrote {assets} assets x {} weekly prices to {}", weeks + 1, output.display());
            return Ok(());
        }
        Command::Ingest { prices } => {
            if let Some(p) = prices {
                cfg.prices = Some(p);
            }
            vec![Stage::Ingest]
        }
        Command::All { prices, tune } => {
            if let Some(p) = prices {
                cfg.prices = Some(p);
            }
            Stage::ALL
                .into_iter()
                .filter(|s| tune || *s != Stage::Tune)
                .collect()
        }
        Command::Predict => vec![Stage::Predict],
        Command::Risk => vec![Stage::Risk],
        Command::Metrics => vec![Stage::Metrics],
        Command::Tune => vec![Stage::Tune],
        Command::Optimize => vec![Stage::Optimize],
        Command::Frontier => vec![Stage::Frontier],
        Command::Report => vec![Stage::Report],
    };
    let pipeline = Pipeline::new(cfg)?;
    for stage in stages {
        run_stage(&pipeline, stage)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
