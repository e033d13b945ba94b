//! `wpcr`: run scenarios, solve the frame-design problems, and check
//! numerical invariants.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wpcr_core::harness::{load_config, optimize, resolve, run_scenario, run_validation, ExperimentConfig, ResultTable};
use wpcr_core::Variant;

#[derive(Parser)]
#[command(name = "wpcr", version, about = "Wireless-powered cognitive radio experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (fig2 to fig8) and write its table.
    Run {
        scenario: String,
        #[command(flatten)]
        common: Common,
    },
    /// Solve P0 (single SU) or P1 (cooperative) with all three optimizers.
    Optimize {
        #[arg(value_enum)]
        problem: Problem,
        #[command(flatten)]
        common: Common,
    },
    /// Run the numerical invariant suite.
    Validate {
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count for every Monte Carlo loop (overrides the config).
    #[arg(long)]
    trials: Option<u64>,
    /// Output CSV path; `-` or absent writes to stdout unless the config
    /// names an output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    P0,
    P1,
}

impl Common {
    fn load(&self, scenario: Option<&str>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = scenario {
            cfg.experiment.scenario = s.to_string();
        }
        if let Some(seed) = self.seed {
            cfg.experiment.base_seed = seed;
        }
        if let Some(t) = self.trials {
            cfg.experiment.trials = t;
            cfg.experiment.detection_trials = t;
            cfg.experiment.cs_trials = t;
        }
        if let Some(out) = &self.out {
            cfg.experiment.output = Some(out.display().to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes the table, plus the resolved config echo when writing to a file.
fn emit(table: &ResultTable, cfg: &ExperimentConfig) -> Result<()> {
    match cfg.experiment.output.as_deref() {
        None | Some("-") => {
            let stdout = std::io::stdout();
            table.write_csv(stdout.lock())?;
        }
        Some(path) => {
            let path = Path::new(path);
            table.emit(path).with_context(|| format!("writing {}", path.display()))?;
            let echo = path.with_extension("config.toml");
            std::fs::write(&echo, cfg.to_toml()).with_context(|| format!("writing {}", echo.display()))?;
            eprintln!("wrote {} and {}", path.display(), echo.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { scenario, common } => {
            let cfg = resolve(&common.load(Some(&scenario))?)?;
            let table = run_scenario(&cfg)?;
            emit(&table, &cfg)?;
            Ok(true)
        }
        Command::Optimize { problem, common } => {
            let cfg = common.load(None)?;
            let variant = match problem {
                Problem::P0 => Variant::P0,
                Problem::P1 => Variant::P1,
            };
            let table = optimize(&cfg, variant)?;
            emit(&table, &cfg)?;
            let infeasible: Vec<String> = table
                .rows
                .iter()
                .zip(table.values("feasible").unwrap_or_default())
                .filter(|(_, f)| f.as_bool() == Some(false))
                .map(|(r, _)| r[table.column("method").unwrap_or(0)].to_string())
                .collect();
            if !infeasible.is_empty() {
                eprintln!("error: no feasible design found by {}", infeasible.join(", "));
                return Ok(false);
            }
            Ok(true)
        }
        Command::Validate { seed } => {
            let checks = run_validation(seed.unwrap_or(1))?;
            let mut out = std::io::stdout().lock();
            for c in &checks {
                writeln!(out, "{c}")?;
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            writeln!(out, "{} checks, {failed} failed", checks.len())?;
            Ok(failed == 0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
