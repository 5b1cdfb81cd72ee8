//! `germforge`: batch experiments over the model registry.
//!
//! Exit codes: 0 when every invariant passes, 1 when any fails, 2 when the
//! configuration or output directory is unusable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use germforge::harness::{run, write_reports, CommandName, Config, ConfigError};

/// `GERMFORGE_OUT` wins over `--out` when both are set.
const OUT_ENV: &str = "GERMFORGE_OUT";

#[derive(Parser)]
#[command(name = "germforge", version, about = "Contraction germs, charts, cones and degrees on registry models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed points, derivatives and tangent coherence of germ models.
    SolveGerm(Common),
    /// Chart atlases and their invariants on section models.
    Parametrize(Common),
    /// Neatness, good position, extreme rays and quadrant structure.
    Cones(Common),
    /// Degrees, invariance under perturbation and homotopy, form integrals.
    Degree(Common),
    /// Every acceptance criterion plus a determinism rerun.
    Selftest(Common),
}

#[derive(Args)]
struct Common {
    /// Model file; without it the command runs its default registry model.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR", default_value = "germforge-out")]
    out: PathBuf,
    #[arg(long, value_name = "REAL", value_parser = positive_real)]
    tol: Option<f64>,
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    trials: Option<u64>,
}

fn positive_real(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(_) => Err("must be a finite positive number".into()),
        Err(e) => Err(e.to_string()),
    }
}

impl Command {
    fn split(self) -> (CommandName, Common) {
        match self {
            Command::SolveGerm(c) => (CommandName::SolveGerm, c),
            Command::Parametrize(c) => (CommandName::Parametrize, c),
            Command::Cones(c) => (CommandName::Cones, c),
            Command::Degree(c) => (CommandName::Degree, c),
            Command::Selftest(c) => (CommandName::Selftest, c),
        }
    }
}

fn execute(command: CommandName, opts: Common) -> Result<bool, ConfigError> {
    let mut config = match &opts.config {
        Some(path) => Config::load(path)?,
        None => command.default_config(),
    };
    config.override_with(opts.seed, opts.tol, opts.trials.map(|n| n as usize));
    let reports = run(command, &config)?;
    for r in &reports {
        println!("{}", r.summary());
        for inv in r.invariants.iter().filter(|i| !i.pass) {
            println!("    {}: {}", inv.name, inv.detail);
        }
    }
    let out = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or(opts.out);
    write_reports(&out, &reports)
        .map_err(|e| ConfigError::Io { path: out.display().to_string(), message: e.to_string() })?;
    println!("wrote {} report(s) to {}", reports.len(), out.display());
    Ok(reports.iter().all(|r| r.passed()))
}

fn main() -> ExitCode {
    // clap exits with 2 on malformed arguments, matching config errors.
    let cli = Cli::parse();
    let (command, opts) = cli.command.split();
    match execute(command, opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("germforge: {e}");
            ExitCode::from(2)
        }
    }
}
