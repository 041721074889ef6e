use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use biphoton::config::RunConfig;
use biphoton::experiments::{self, SweepAxis};
use biphoton::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "biphoton", version, about = "Correlation post-selected imaging through scattering media")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Reject grids that under-resolve the source.
    #[arg(long, global = true, action = clap::ArgAction::Set)]
    strict_sampling: Option<bool>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Single pipeline run: coincidences, profiles, metrics, images.
    Simulate,
    /// Contrast versus scattering strength.
    SweepScatter,
    /// Contrast versus source entanglement at fixed scattering.
    SweepEntanglement,
    /// Write a synthetic time-tagged event stream.
    EventsSynth,
    /// Pair events and reconstruct images.
    EventsAnalyze,
    /// Compare correlation broadening with the closed-form relations.
    ValidateBroadening,
    /// Tabulate screen correlation width against segment count.
    CalibrateScreens,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(s) = cli.strict_sampling {
        cfg.strict_sampling = s;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let out = &cli.out;
    match cli.command {
        Command::Simulate => {
            experiments::cmd_simulate(cfg, out)?;
        }
        Command::SweepScatter => {
            experiments::cmd_sweep(cfg, out, SweepAxis::Strength)?;
        }
        Command::SweepEntanglement => {
            experiments::cmd_sweep(cfg, out, SweepAxis::Entanglement)?;
        }
        Command::EventsSynth => {
            experiments::cmd_events_synth(cfg, out)?;
        }
        Command::EventsAnalyze => {
            experiments::cmd_events_analyze(cfg, out)?;
        }
        Command::ValidateBroadening => {
            experiments::cmd_validate_broadening(cfg, out)?;
        }
        Command::CalibrateScreens => {
            experiments::cmd_calibrate_screens(cfg, out)?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| execute(cli, &cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
