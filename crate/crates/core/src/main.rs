use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use cfmimo::clustering::Strategy;
use cfmimo::config::SimConfig;
use cfmimo::sim::{campaign_cells, run_campaign, run_setups, write_episodes_csv, write_events_csv, CampaignCell};
use cfmimo::{selftest, SimError};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Cell-free massive MIMO mobility and handover simulator.
#[derive(Parser)]
#[command(name = "cfsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run episodes for a single strategy, threshold and speed.
    Run(RunArgs),
    /// Sweep strategies, thresholds and speeds and write aggregates.
    Sweep(SweepArgs),
    /// Print the resolved configuration.
    Validate(CommonArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (flat TOML key-value pairs).
    #[arg(long, env = "CFSIM_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    setups: Option<usize>,
    /// Monte-Carlo draws per step.
    #[arg(long)]
    n_mc: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    threshold_db: Option<f64>,
    #[arg(long)]
    speed_kmh: Option<f64>,
    /// Also write handover events to this CSV.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    threshold_db: Option<f64>,
    /// Comma-separated speeds in km/h.
    #[arg(long, value_delimiter = ',')]
    speeds: Option<Vec<f64>>,
}

fn load(common: &CommonArgs) -> Result<SimConfig, SimError> {
    let mut cfg = match &common.config {
        Some(path) => SimConfig::from_file(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(setups) = common.setups {
        cfg.num_setups = setups;
    }
    if let Some(n_mc) = common.n_mc {
        cfg.n_mc = n_mc;
    }
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = load(&args.common)?;
    if let Some(s) = &args.strategy {
        cfg.handover.strategy = s.parse()?;
    }
    if let Some(m) = args.threshold_db {
        cfg.handover.threshold_db = m;
    }
    let strategy = cfg.handover.strategy;
    let speed_kmh = args.speed_kmh.unwrap_or(cfg.speeds_kmh[0]);
    cfg.strategies = vec![strategy];
    cfg.thresholds_db = vec![cfg.handover.threshold_db];
    cfg.speeds_kmh = vec![speed_kmh];
    cfg.validate()?;
    let cell = CampaignCell {
        strategy,
        threshold_db: matches!(strategy, Strategy::Fixed | Strategy::Opportunistic).then_some(cfg.handover.threshold_db),
        speed_kmh,
    };
    let episodes = run_setups(&cfg, cell, args.common.parallelism)?;
    write_episodes_csv(&episodes, output(args.common.out.as_deref())?)?;
    if let Some(path) = &args.events {
        write_events_csv(&episodes, output(Some(path))?)?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = load(&args.common)?;
    if let Some(s) = &args.strategy {
        cfg.strategies = vec![s.parse()?];
    }
    if let Some(m) = args.threshold_db {
        cfg.thresholds_db = vec![m];
    }
    if let Some(v) = args.speeds {
        cfg.speeds_kmh = v;
    }
    cfg.validate()?;
    let result = run_campaign(&cfg, &campaign_cells(&cfg), args.common.parallelism)?;
    result.write_csv(output(args.common.out.as_deref())?)?;
    Ok(())
}

fn validate(args: CommonArgs) -> Result<()> {
    let cfg = load(&args)?;
    cfg.validate()?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(cfg.to_toml().as_bytes())?;
    Ok(())
}

/// Returns false when any check fails.
fn run_selftest() -> bool {
    let outcomes = selftest::run_all();
    for c in &outcomes {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    outcomes.iter().all(|c| c.passed)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SimError>() {
        Some(e) if e.is_config() => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Validate(args) => validate(args),
        Command::Selftest => {
            return if run_selftest() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_RUNTIME) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
