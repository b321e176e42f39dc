use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use frustration_core::affect::cost_minimizing_threshold;
use frustration_core::harness::{
    self, audit, experiment, load_matrix, load_run_config, load_sweep, run_loaded, sweep_csv, write_outputs,
    HarnessError,
};
use log::{info, warn};

/// Exit codes beyond the harness's own (1 io, 2 config, 3 runtime).
const EXIT_PARTIAL: u8 = 4;
const EXIT_AUDIT: u8 = 5;

/// Environment variable controlling log verbosity (`error` .. `trace`).
const LOG_ENV: &str = "FRUSTRATION_LOG";

#[derive(Parser)]
#[command(name = "frustration", version, about = "Reward-loss agent simulator")]
struct Cli {
    /// Load and check every input, then exit without running.
    #[arg(long, global = true)]
    validate_only: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write events.csv, trace.csv, summary.json.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configuration's step count.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run interventions x worlds x seeds and write report.csv.
    Experiment {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate alarms, false alarms and misses over threat thresholds.
    SweepThreshold {
        #[arg(long)]
        world: PathBuf,
        /// Sweep settings (thresholds, costs, seeds) as JSON.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-check a simulate output directory's events against its trace.
    Audit {
        #[arg(long)]
        run: PathBuf,
    },
}

enum Failure {
    Harness(HarnessError),
    Other(u8, anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

impl From<harness::ConfigError> for Failure {
    fn from(e: harness::ConfigError) -> Self {
        Failure::Harness(e.into())
    }
}

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    fs::write(path, body)
        .map_err(|e| Failure::Harness(HarnessError::Io { context: format!("writing {}", path.display()), source: e }))
}

fn simulate(
    config: &Path,
    seed: Option<u64>,
    steps: Option<u64>,
    out: &Path,
    validate_only: bool,
) -> Result<(), Failure> {
    let mut loaded = load_run_config(config)?;
    if let Some(seed) = seed {
        loaded.config.seed = seed;
    }
    if let Some(steps) = steps {
        loaded.config.steps = steps;
    }
    if validate_only {
        println!("{}: ok", config.display());
        return Ok(());
    }
    let started = Instant::now();
    let output = run_loaded(&loaded)?;
    write_outputs(&output, out)?;
    let s = &output.summary;
    info!("{} finished in {:.2?}", s.run_id, started.elapsed());
    println!(
        "{}: {} steps, {} episodes, {} events, frustration {:.6} (weighted {:.6})",
        s.run_id, s.steps, s.episodes, s.event_count, s.totals.total, s.totals.weighted_total
    );
    Ok(())
}

fn run_experiment(matrix: &Path, out: &Path, validate_only: bool) -> Result<(), Failure> {
    let m = load_matrix(matrix)?;
    for (name, world) in &m.worlds {
        if let Err(e) = world {
            warn!("world {name}: {e}");
        }
    }
    let cells = m.interventions.len() * m.worlds.len() * m.seeds.len();
    if validate_only {
        println!("{}: ok ({cells} cells)", matrix.display());
        return Ok(());
    }
    let started = Instant::now();
    let report = experiment(&m)?;
    fs::create_dir_all(out).map_err(|e| {
        Failure::Harness(HarnessError::Io { context: format!("creating {}", out.display()), source: e })
    })?;
    write(&out.join("report.csv"), &report.csv)?;
    let failed = report.failed();
    println!("{cells} cells in {:.1?}, {failed} failed", started.elapsed());
    if failed > 0 {
        for (cell, outcome) in &report.cells {
            if let Err(e) = outcome {
                eprintln!("failed: {} / {} / seed {}: {e}", cell.intervention, cell.world, cell.seed);
            }
        }
        return Err(Failure::Other(EXIT_PARTIAL, anyhow::anyhow!("{failed} of {cells} cells failed")));
    }
    Ok(())
}

fn sweep(world: &Path, policy: &Path, out: &Path, validate_only: bool) -> Result<(), Failure> {
    let (w, spec) = load_sweep(world, policy)?;
    if validate_only {
        println!("{}: ok", policy.display());
        return Ok(());
    }
    let (body, totals) = sweep_csv(&w, &spec)?;
    fs::create_dir_all(out).map_err(|e| {
        Failure::Harness(HarnessError::Io { context: format!("creating {}", out.display()), source: e })
    })?;
    write(&out.join("sweep.csv"), &body)?;
    for r in &totals {
        println!(
            "threshold {:>6}: alarms {:>5}  false alarms {:>5}  misses {:>5}  cost {:.1}",
            r.threshold, r.alarms, r.false_alarms, r.misses, r.realized_cost
        );
    }
    if let Some(best) = cost_minimizing_threshold(&totals) {
        println!("cost-minimizing threshold: {best}");
    }
    Ok(())
}

fn run_audit(dir: &Path) -> Result<(), Failure> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())).map_err(|e| Failure::Other(1, e))
    };
    let report = audit(&read("events.csv")?, &read("trace.csv")?)?;
    println!("{} steps, {} events, {} mismatches", report.steps, report.events, report.mismatches.len());
    if report.ok() {
        return Ok(());
    }
    for m in report.mismatches.iter().take(20) {
        eprintln!("{m}");
    }
    Err(Failure::Other(EXIT_AUDIT, anyhow::anyhow!("audit failed")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, seed, steps, out } => simulate(config, *seed, *steps, out, cli.validate_only),
        Command::Experiment { matrix, out } => run_experiment(matrix, out, cli.validate_only),
        Command::SweepThreshold { world, policy, out } => sweep(world, policy, out, cli.validate_only),
        Command::Audit { run } => run_audit(run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(Failure::Other(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
