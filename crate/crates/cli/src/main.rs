use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bergman_cli::{emit_report, parse_config, run, run_suite, Experiment};
use clap::{Args, Parser, Subcommand};

/// Bergman kernel experiments on products of elliptic curves.
#[derive(Parser)]
#[command(name = "bergman-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Paths {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV files and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Section counts, Gram rank and harmonicity.
    Dims(Paths),
    /// Density, trace identity and flat-model calibration.
    Density(Paths),
    /// Off-diagonal Gaussian decay.
    Offdiag(Paths),
    /// Far-field decay.
    Far(Paths),
    /// Ratio profile along segments.
    Ratio(Paths),
    /// Embedding scan.
    Embed(Paths),
    /// Fubini-Study pullback convergence.
    Pullback(Paths),
    /// Directional derivative sums.
    Derivs(Paths),
    /// Every experiment enabled in the config, plus the infrastructure checks.
    All(Paths),
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    let (single, paths) = match cli.command {
        Command::Dims(p) => (Some(Experiment::Dims), p),
        Command::Density(p) => (Some(Experiment::Density), p),
        Command::Offdiag(p) => (Some(Experiment::Offdiag), p),
        Command::Far(p) => (Some(Experiment::Far), p),
        Command::Ratio(p) => (Some(Experiment::Ratio), p),
        Command::Embed(p) => (Some(Experiment::Embed), p),
        Command::Pullback(p) => (Some(Experiment::Pullback), p),
        Command::Derivs(p) => (Some(Experiment::Derivs), p),
        Command::All(p) => (None, p),
    };
    let text = std::fs::read_to_string(&paths.config)
        .with_context(|| format!("reading {}", paths.config.display()))?;
    let config = parse_config(&text).with_context(|| format!("in {}", paths.config.display()))?;
    let report = match single {
        Some(e) => run(&config.only(e)),
        None => run_suite(&config),
    };
    emit_report(&report, &paths.out)?;
    for c in &report.criteria {
        println!(
            "{} {} measured={} ({})",
            c.criterion_id,
            if c.pass { "PASS" } else { "FAIL" },
            c.measured,
            c.notes
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for s in report.experiments.iter().filter(|s| !s.ok) {
        eprintln!("{} failed: {}", s.name, s.error.as_deref().unwrap_or(""));
    }
    println!("outputs in {}", paths.out.display());
    Ok(report.all_pass())
}
