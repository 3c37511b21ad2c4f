//! Runs the bundled day with and without control and prints a summary.
//!
//! cargo run --release -p voltguard-harness --example day_summary [scenario.toml]

use std::time::Instant;

use voltguard_core::metrics::EtaConvention;
use voltguard_harness::report::{metrics_report, verify_report};
use voltguard_harness::{no_control_baseline, run_day, RunOptions, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/clear_sky/scenario.toml".into());
    let scn = Scenario::load(&path)?;
    let v_max = scn.config.control.v_max;

    let t0 = Instant::now();
    let base = no_control_baseline(&scn, RunOptions::baseline())?;
    let peak = |log: &voltguard_harness::RunLog| log.max_voltage_per_second().fold(0.0, f64::max);
    println!("baseline: {:.1?}, {} s above {v_max}, max {:.4} pu", t0.elapsed(), base.seconds_above(v_max), peak(&base));

    let t0 = Instant::now();
    let run = run_day(&scn, RunOptions::default())?;
    println!(
        "control:  {:.1?}, {} s above {v_max}, max {:.4} pu, curtailed {:.1} kWh",
        t0.elapsed(),
        run.seconds_above(v_max),
        peak(&run),
        run.curtailed_energy_wh() / 1000.0
    );
    let mean_ms = run.cycles.iter().map(|c| c.estimator_ms + c.controller_ms).sum::<f64>() / run.cycles.len() as f64;
    println!("mean cycle compute: {mean_ms:.3} ms\n");

    print!("{}", metrics_report(&run, EtaConvention::default())?.to_table());
    println!();
    print!("{}", verify_report(&run)?.to_text());
    Ok(())
}
