//! `voltguard`: run a scenario day, score the estimator, audit the controller.
//!
//! Exit codes: 0 on success, 1 on a simulation failure or a failed audit,
//! 2 on bad input (missing scenario, invalid config, unusable run log).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};
use voltguard_core::metrics::EtaConvention;
use voltguard_harness::report::{metrics_report, verify_report};
use voltguard_harness::{run_day, HarnessError, RunLog, RunOptions, Scenario};

const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "voltguard", version, about = "Model-less robust voltage control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario day and write its run log.
    Run {
        /// Scenario TOML file, or a directory holding `scenario.toml`.
        scenario: PathBuf,
        /// Output directory. Defaults to `$VOLTGUARD_OUT/<name>-seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Keep every plant at its MPP with no control.
        #[arg(long)]
        no_control: bool,
        #[arg(long, value_enum)]
        telemetry: Option<OnOff>,
        #[arg(long, env = "VOLTGUARD_OUT", default_value = "runs", hide_env_values = true)]
        out_root: PathBuf,
    },
    /// Coefficient accuracy and interval quality for a run; writes metrics.csv.
    Metrics {
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Eta::CoveragePenalty)]
        eta: Eta,
    },
    /// Re-check every optimal cycle against the worst case of its intervals.
    Verify { run_dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Eta {
    CoveragePenalty,
    Printed,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Profile(_) | HarnessError::Log(_) => Self::input(e.to_string()),
            _ => Self::runtime(e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    schema_version: u32,
    scenario: String,
    scenario_sha256: String,
    seed: u64,
    controlled: bool,
    telemetry: bool,
    code_version: &'static str,
    outputs: Vec<String>,
    timing: ManifestTiming,
}

#[derive(Serialize)]
struct ManifestTiming {
    wall_s: f64,
    cycles: usize,
    mean_cycle_ms: f64,
    max_cycle_ms: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn scenario_file(path: &Path) -> Result<PathBuf, Failure> {
    let file = if path.is_dir() { path.join("scenario.toml") } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(Failure::input(format!("scenario not found: {}", file.display())));
    }
    Ok(file)
}

/// Write through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, body: &str) -> Result<(), Failure> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, body).map_err(|e| Failure::runtime(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn run(
    scenario: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    no_control: bool,
    telemetry: Option<OnOff>,
    out_root: &Path,
) -> Result<(), Failure> {
    let file = scenario_file(scenario)?;
    let bytes = std::fs::read(&file).map_err(|e| Failure::input(format!("cannot read {}: {e}", file.display())))?;
    let scn = Scenario::load(&file)?;
    let seed = seed.unwrap_or(scn.config.seed);
    let out = out.unwrap_or_else(|| {
        let suffix = if no_control { "-baseline" } else { "" };
        out_root.join(format!("{}-seed{seed}{suffix}", scn.config.name))
    });

    let opts = RunOptions {
        control: !no_control,
        seed: Some(seed),
        telemetry: telemetry.map(|t| matches!(t, OnOff::On)),
        ..RunOptions::default()
    };
    let started = Instant::now();
    let log = match run_day(&scn, opts) {
        Ok(log) => log,
        Err(HarnessError::PowerFlowDiverged { t, message, partial }) => {
            partial.write_dir(&out)?;
            return Err(Failure::runtime(format!(
                "power flow diverged at t={t}: {message}; partial log in {}",
                out.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let wall_s = started.elapsed().as_secs_f64();
    log.write_dir(&out)?;

    let budgets: Vec<f64> = log.cycles.iter().map(|c| c.budget_ms).collect();
    let mean = if budgets.is_empty() { 0.0 } else { budgets.iter().sum::<f64>() / budgets.len() as f64 };
    let mut outputs: Vec<String> = std::fs::read_dir(&out)
        .map_err(|e| Failure::runtime(format!("{}: {e}", out.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    outputs.sort();
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        scenario: file.display().to_string(),
        scenario_sha256: hex(&Sha256::digest(&bytes)),
        seed,
        controlled: !no_control,
        telemetry: log.telemetry.is_some(),
        code_version: env!("CARGO_PKG_VERSION"),
        outputs,
        timing: ManifestTiming {
            wall_s,
            cycles: budgets.len(),
            mean_cycle_ms: mean,
            max_cycle_ms: budgets.iter().copied().fold(0.0, f64::max),
        },
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&out.join("manifest.json"), &body)?;

    println!(
        "{}: {} s simulated, {} cycles, {} s above {:.3} pu, {:.1} kWh curtailed",
        out.display(),
        log.seconds.len(),
        log.cycles.len(),
        log.seconds_above(log.meta.v_max),
        log.meta.v_max,
        log.curtailed_energy_wh() / 1000.0
    );
    Ok(())
}

fn read_log(dir: &Path) -> Result<RunLog, Failure> {
    if !dir.is_dir() {
        return Err(Failure::input(format!("run directory not found: {}", dir.display())));
    }
    RunLog::read_dir(dir).map_err(|e| match e {
        HarnessError::Io { .. } => Failure::input(e.to_string()),
        e => e.into(),
    })
}

fn metrics(dir: &Path, eta: Eta) -> Result<(), Failure> {
    let log = read_log(dir)?;
    let convention = match eta {
        Eta::CoveragePenalty => EtaConvention::CoveragePenalty,
        Eta::Printed => EtaConvention::Printed,
    };
    let report = metrics_report(&log, convention)?;
    let path = dir.join("metrics.csv");
    std::fs::write(&path, report.to_csv()).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    print!("{}", report.to_table());
    Ok(())
}

fn verify(dir: &Path) -> Result<(), Failure> {
    let log = read_log(dir)?;
    let report = verify_report(&log)?;
    print!("{}", report.to_text());
    match report.violations() {
        0 => Ok(()),
        n => Err(Failure::runtime(format!("{n} audited cycles exceed the voltage bounds"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, out, seed, no_control, telemetry, out_root } => {
            run(&scenario, out, seed, no_control, telemetry, &out_root)
        }
        Command::Metrics { run_dir, eta } => metrics(&run_dir, eta),
        Command::Verify { run_dir } => verify(&run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
