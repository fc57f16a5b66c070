use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};

use darkcycle_cli::commands::{self, defaults, Outcome, RunContext};
use darkcycle_cli::config::RunConfig;
use darkcycle_cli::output::OutDir;

#[derive(Parser)]
#[command(name = "darkcycle", version, about = "Cavity-enhanced four-wave-mixing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; each command falls back to its built-in config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: output.dir from the config, else "out"].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for Monte-Carlo runs, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit nonzero if any grid point or trajectory fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plots: bool,
    /// Worker threads [default: available parallelism].
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Emission rate over the (Δ12, Δ23) plane with eigenenergy overlay.
    Spectroscopy,
    /// g2(τ) with damped-sinusoid fits.
    Correlation,
    /// Zeno factors of the dark-state ladder.
    Zeno,
    /// 7-level photon statistics with and without the cavity.
    Montecarlo,
    /// Figure-of-merit sweeps.
    Fom,
    /// Fast numerical self-checks.
    Selftest,
}

impl Command {
    fn default_config(self) -> &'static str {
        match self {
            Command::Spectroscopy => defaults::SPECTROSCOPY,
            Command::Correlation => defaults::CORRELATION,
            Command::Zeno => defaults::ZENO,
            Command::Montecarlo => defaults::MONTECARLO,
            Command::Fom => defaults::FOM,
            Command::Selftest => unreachable!("selftest needs no config"),
        }
    }
}

fn run(cli: &Cli) -> Result<(Outcome, bool)> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None if matches!(cli.command, Command::Selftest) => RunConfig::default(),
        None => RunConfig::parse(cli.command.default_config()).context("built-in config")?,
    };
    let dir = c.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let plots = c.plots || cfg.output.plots.unwrap_or(false);
    let mut out = OutDir::new(dir, plots)?;
    let mut ctx = RunContext { out: &mut out, seed: c.seed };
    let outcome = match cli.command {
        Command::Spectroscopy => commands::cmd_spectroscopy(&cfg, &mut ctx)?,
        Command::Correlation => commands::cmd_correlation(&cfg, &mut ctx)?,
        Command::Zeno => commands::cmd_zeno(&cfg, &mut ctx)?,
        Command::Montecarlo => commands::cmd_montecarlo(&cfg, &mut ctx)?,
        Command::Fom => commands::cmd_fom(&cfg, &mut ctx)?,
        Command::Selftest => commands::cmd_selftest(&mut ctx)?,
    };
    for p in out.written() {
        println!("wrote {}", p.display());
    }
    Ok((outcome, matches!(cli.command, Command::Selftest)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((o, checks_gate)) => {
            for line in &o.report {
                println!("{line}");
            }
            for c in &o.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if cli.common.strict && o.failed_points > 0 {
                eprintln!("error: {} failed points", o.failed_points);
                return ExitCode::from(2);
            }
            if checks_gate && o.checks.iter().any(|c| !c.pass) {
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
