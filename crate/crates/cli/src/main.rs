use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use popnet_core::experiment::{generate_to, run_experiment, summarize, DataSpec, ExperimentConfig};
use popnet_core::verify::run_checks;

/// Population-coding (split network) experiments at desk scale.
#[derive(Debug, Parser)]
#[command(name = "popnet", version)]
struct Cli {
    /// Experiment config (`run`) or data spec (`gen`), JSON.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, global = true, value_name = "CSV", value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Overwrite existing outputs; let `report` combine different configs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a generated dataset in the columnar text format.
    Gen,
    /// Train baseline and split models over the config's grid.
    Run,
    /// Summarize run reports (files or directories) into CSV and plot data.
    Report { paths: Vec<PathBuf> },
    /// Run the built-in invariant and oracle checks.
    Verify,
}

/// Exit status of a command that ran to completion: 0, or 2 when some grid
/// cells failed. Errors exit with 1.
#[derive(Debug)]
enum Outcome {
    Ok,
    PartialFailure,
}

fn config_path(cli: &Cli) -> anyhow::Result<&Path> {
    cli.config.as_deref().context("--config PATH is required")
}

fn gen(cli: &Cli) -> anyhow::Result<Outcome> {
    let path = config_path(cli)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut spec = DataSpec::from_json(&text)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let seeds = cli.seeds.clone().unwrap_or_else(|| vec![spec.seed]);
    for &seed in &seeds {
        spec.seed = seed;
        let dir = if seeds.len() == 1 {
            out.clone()
        } else {
            out.join(format!("seed-{seed}"))
        };
        for written in generate_to(&spec, &dir, cli.force)? {
            println!("wrote {}", written.display());
        }
    }
    Ok(Outcome::Ok)
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let path = config_path(cli)?;
    let mut config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seeds) = &cli.seeds {
        config.seeds = seeds.clone();
        config.validate()?;
    }
    let out = cli.out.clone().unwrap_or_else(|| Path::new("runs").join(&config.name));
    let outcome = run_experiment(&config, &out, cli.force)?;
    for p in &outcome.report_paths {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", outcome.summary_path.display());
    print!("{}", std::fs::read_to_string(&outcome.summary_path)?);
    if outcome.failures > 0 {
        eprintln!(
            "{} seed/model runs failed; see the reports for messages",
            outcome.failures
        );
        return Ok(Outcome::PartialFailure);
    }
    Ok(Outcome::Ok)
}

fn report(cli: &Cli, paths: &[PathBuf]) -> anyhow::Result<Outcome> {
    if paths.is_empty() {
        bail!("no run reports given");
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    let summary = summarize(paths, &out, cli.force)?;
    println!("summarized {} reports", summary.reports);
    println!("wrote {}", summary.csv_path.display());
    println!("wrote {}", summary.plot_path.display());
    Ok(Outcome::Ok)
}

fn verify() -> anyhow::Result<Outcome> {
    let checks = run_checks();
    for c in &checks {
        println!("{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Gen => gen(&cli),
        Command::Run => run(&cli),
        Command::Report { paths } => report(&cli, paths),
        Command::Verify => verify(),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::PartialFailure) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
