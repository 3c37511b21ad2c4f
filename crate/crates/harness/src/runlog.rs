//! In-memory run trace and its on-disk CSV form.
//!
//! A run directory holds:
//!
//! | file            | content                                              |
//! |-----------------|------------------------------------------------------|
//! | `run.json`      | node and plant names, bounds, confidence, budget     |
//! | `seconds.csv`   | true and measured voltages, plant output, MPP         |
//! | `cycles.csv`    | per control cycle: status, measured, predicted and next-second voltages |
//! | `control.csv`   | per cycle and plant: setpoints, measurements, MPP forecast |
//! | `estimates.csv` | per cycle, node and plant coefficient: estimate and half-width |
//! | `oracle.csv`    | per cycle, node and plant coefficient: finite-difference value |
//! | `timing.csv`    | per cycle wall-clock compute time (not reproducible)  |
//!
//! Every CSV starts with a `# voltguard <name> v1` schema line.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use voltguard_core::control::SolveStatus;

use crate::HarnessError;

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Files whose bytes depend only on scenario, seed and code version.
pub const DETERMINISTIC_FILES: [&str; 6] =
    ["run.json", "seconds.csv", "cycles.csv", "control.csv", "estimates.csv", "oracle.csv"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantInfo {
    pub name: String,
    pub bus: String,
    pub node: usize,
    pub s_max_va: f64,
    pub pf_min: f64,
    pub reactive_capable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub controlled: bool,
    pub node_names: Vec<String>,
    pub plants: Vec<PlantInfo>,
    pub s_base_va: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v_margin: f64,
    pub xi: f64,
    pub alpha: f64,
    pub control_period_s: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondRecord {
    pub t: u64,
    pub slack_v: f64,
    pub v_true: Vec<f64>,
    pub v_meas: Vec<f64>,
    pub p_w: Vec<f64>,
    pub q_var: Vec<f64>,
    pub mpp_w: Vec<f64>,
}

/// Coefficients of one node against the plant buses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlantCoefficients {
    pub kp: Vec<f64>,
    pub kq: Vec<f64>,
    pub dkp: Vec<f64>,
    pub dkq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub t: u64,
    pub status: SolveStatus,
    pub objective_pu2: f64,
    pub setpoint_p_w: Vec<f64>,
    pub setpoint_q_var: Vec<f64>,
    pub p_meas_w: Vec<f64>,
    pub q_meas_var: Vec<f64>,
    pub mpp_forecast_w: Vec<f64>,
    pub v_prev: Vec<f64>,
    pub v_pred: Vec<f64>,
    /// True voltages of the first second under the new setpoints; empty when
    /// the run ended first.
    pub v_next: Vec<f64>,
    pub rank_deficient: bool,
    pub estimates: Vec<PlantCoefficients>,
    pub oracle: Vec<PlantCoefficients>,
    pub estimator_ms: f64,
    pub controller_ms: f64,
    pub oracle_ms: f64,
    /// Compute time read from the run's clock (estimation plus control).
    pub budget_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TelemetrySummary {
    pub datagrams_sent: u64,
    pub send_errors: u64,
    pub received: u64,
    pub crc_failures: u64,
    pub complete_frames: u64,
    pub partial_frames: u64,
    pub late: u64,
    pub duplicates: u64,
    pub queue_dropped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub seconds: Vec<SecondRecord>,
    pub cycles: Vec<CycleRecord>,
    pub telemetry: Option<TelemetrySummary>,
}

fn schema(name: &str) -> String {
    format!("# voltguard {name} v{LOG_SCHEMA_VERSION}\n")
}

fn push_fixed(s: &mut String, v: f64, d: usize) {
    let _ = write!(s, ",{v:.d$}");
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?);
    f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(|e| HarnessError::io(&path, e))
}

pub fn status_from_str(s: &str) -> Option<SolveStatus> {
    Some(match s {
        "optimal" => SolveStatus::Optimal,
        "infeasible" => SolveStatus::Infeasible,
        "max_iterations" => SolveStatus::MaxIterations,
        "fallback" => SolveStatus::Fallback,
        "deadline_missed" => SolveStatus::DeadlineMissed,
        _ => return None,
    })
}

impl RunLog {
    pub fn n_nodes(&self) -> usize {
        self.meta.node_names.len()
    }

    /// Largest true voltage of every logged second.
    pub fn max_voltage_per_second(&self) -> impl Iterator<Item = f64> + '_ {
        self.seconds.iter().map(|s| s.v_true.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn seconds_above(&self, limit: f64) -> usize {
        self.max_voltage_per_second().filter(|&v| v > limit).count()
    }

    pub fn curtailed_energy_wh(&self) -> f64 {
        self.seconds.iter().map(|s| s.mpp_w.iter().zip(&s.p_w).map(|(m, p)| m - p).sum::<f64>()).sum::<f64>() / 3600.0
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let names = &self.meta.node_names;
        let plants: Vec<&str> = self.meta.plants.iter().map(|p| p.name.as_str()).collect();
        let meta = serde_json::to_string_pretty(&self.meta).expect("metadata serializes") + "\n";
        write_file(dir, "run.json", &meta)?;

        let mut s = schema("seconds");
        s.push_str("t,slack_v");
        for prefix in ["v", "vm"] {
            for n in names {
                let _ = write!(s, ",{prefix}_{n}");
            }
        }
        for prefix in ["p", "q", "mpp"] {
            for p in &plants {
                let _ = write!(s, ",{prefix}_{p}");
            }
        }
        s.push('\n');
        for r in &self.seconds {
            let _ = write!(s, "{}", r.t);
            push_fixed(&mut s, r.slack_v, 6);
            r.v_true.iter().chain(&r.v_meas).for_each(|&v| push_fixed(&mut s, v, 6));
            r.p_w.iter().chain(&r.q_var).chain(&r.mpp_w).for_each(|&v| push_fixed(&mut s, v, 1));
            s.push('\n');
        }
        write_file(dir, "seconds.csv", &s)?;

        let mut c = schema("cycles");
        c.push_str("t,status,objective_pu2,rank_deficient");
        for prefix in ["v_prev", "v_pred", "v_next"] {
            for n in names {
                let _ = write!(c, ",{prefix}_{n}");
            }
        }
        c.push('\n');
        let mut ctl = schema("control");
        ctl.push_str("t,plant,bus,p_w,q_var,p_meas_w,q_meas_var,mpp_w,status,objective_pu2\n");
        let mut est = schema("estimates");
        est.push_str("t,node,coef,hat,delta\n");
        let mut ora = schema("oracle");
        ora.push_str("t,node,coef,value\n");
        let mut tim = schema("timing");
        tim.push_str("t,estimator_ms,oracle_ms,controller_ms,budget_ms,deadline_missed\n");
        for r in &self.cycles {
            let _ = write!(c, "{},{},{:.9e},{}", r.t, r.status.as_str(), r.objective_pu2, r.rank_deficient as u8);
            r.v_prev.iter().chain(&r.v_pred).for_each(|&v| push_fixed(&mut c, v, 7));
            if r.v_next.is_empty() {
                names.iter().for_each(|_| c.push(','));
            } else {
                r.v_next.iter().for_each(|&v| push_fixed(&mut c, v, 7));
            }
            c.push('\n');
            for (j, p) in self.meta.plants.iter().enumerate() {
                let _ = writeln!(
                    ctl,
                    "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{:.9e}",
                    r.t,
                    p.name,
                    p.bus,
                    r.setpoint_p_w[j],
                    r.setpoint_q_var[j],
                    r.p_meas_w[j],
                    r.q_meas_var[j],
                    r.mpp_forecast_w[j],
                    r.status.as_str(),
                    r.objective_pu2
                );
            }
            for (i, n) in names.iter().enumerate() {
                let (e, o) = (&r.estimates[i], &r.oracle[i]);
                for (j, p) in self.meta.plants.iter().enumerate() {
                    let _ = writeln!(est, "{},{n},kp:{},{:.9e},{:.9e}", r.t, p.bus, e.kp[j], e.dkp[j]);
                    let _ = writeln!(est, "{},{n},kq:{},{:.9e},{:.9e}", r.t, p.bus, e.kq[j], e.dkq[j]);
                    let _ = writeln!(ora, "{},{n},kp:{},{:.9e}", r.t, p.bus, o.kp[j]);
                    let _ = writeln!(ora, "{},{n},kq:{},{:.9e}", r.t, p.bus, o.kq[j]);
                }
            }
            let _ = writeln!(
                tim,
                "{},{:.3},{:.3},{:.3},{:.3},{}",
                r.t,
                r.estimator_ms,
                r.oracle_ms,
                r.controller_ms,
                r.budget_ms,
                (r.status == SolveStatus::DeadlineMissed) as u8
            );
        }
        write_file(dir, "cycles.csv", &c)?;
        write_file(dir, "control.csv", &ctl)?;
        write_file(dir, "estimates.csv", &est)?;
        write_file(dir, "oracle.csv", &ora)?;
        write_file(dir, "timing.csv", &tim)?;
        if let Some(t) = &self.telemetry {
            write_file(dir, "telemetry.json", &(serde_json::to_string_pretty(t).expect("summary serializes") + "\n"))?;
        }
        Ok(())
    }

    /// Reads metadata and per-cycle records back (per-second data is skipped).
    pub fn read_dir(dir: &Path) -> Result<Self, HarnessError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))
        };
        let bad = |name: &str, msg: String| HarnessError::Log(format!("{}: {msg}", dir.join(name).display()));
        let meta: RunMeta = serde_json::from_str(&read("run.json")?).map_err(|e| bad("run.json", e.to_string()))?;
        let n = meta.node_names.len();
        let m = meta.plants.len();

        let body = |name: &str| -> Result<Vec<csv::StringRecord>, HarnessError> {
            let text = read(name)?;
            let kind = name.trim_end_matches(".csv");
            let (first, rest) = text.split_once('\n').ok_or_else(|| bad(name, "empty file".into()))?;
            if first != schema(kind).trim_end() {
                return Err(bad(name, format!("unexpected schema line `{first}`")));
            }
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
            rdr.records().collect::<Result<_, _>>().map_err(|e| bad(name, e.to_string()))
        };
        let num = |name: &str, s: &str| s.parse::<f64>().map_err(|_| bad(name, format!("bad number `{s}`")));
        let int = |name: &str, s: &str| s.parse::<u64>().map_err(|_| bad(name, format!("bad integer `{s}`")));

        let mut cycles = Vec::new();
        for rec in body("cycles.csv")? {
            if rec.len() != 4 + 3 * n {
                return Err(bad("cycles.csv", format!("row with {} fields", rec.len())));
            }
            let vec = |k: usize| -> Result<Vec<f64>, HarnessError> {
                (0..n).map(|i| num("cycles.csv", &rec[4 + k * n + i])).collect()
            };
            let v_next = if rec[4 + 2 * n].is_empty() { Vec::new() } else { vec(2)? };
            cycles.push(CycleRecord {
                t: int("cycles.csv", &rec[0])?,
                status: status_from_str(&rec[1]).ok_or_else(|| bad("cycles.csv", format!("status `{}`", &rec[1])))?,
                objective_pu2: num("cycles.csv", &rec[2])?,
                rank_deficient: &rec[3] == "1",
                setpoint_p_w: vec![0.0; m],
                setpoint_q_var: vec![0.0; m],
                p_meas_w: vec![0.0; m],
                q_meas_var: vec![0.0; m],
                mpp_forecast_w: vec![0.0; m],
                v_prev: vec(0)?,
                v_pred: vec(1)?,
                v_next,
                estimates: vec![PlantCoefficients::zeros(m); n],
                oracle: vec![PlantCoefficients::zeros(m); n],
                estimator_ms: 0.0,
                controller_ms: 0.0,
                oracle_ms: 0.0,
                budget_ms: 0.0,
            });
        }
        let index: std::collections::HashMap<u64, usize> = cycles.iter().enumerate().map(|(k, c)| (c.t, k)).collect();
        let cycle_of = |name: &str, t: u64| index.get(&t).copied().ok_or_else(|| bad(name, format!("no cycle at t={t}")));
        let plant_of = |name: &str, bus: &str| {
            meta.plants.iter().position(|p| p.bus == bus).ok_or_else(|| bad(name, format!("unknown plant bus {bus}")))
        };
        let node_of = |name: &str, node: &str| {
            meta.node_names.iter().position(|x| x == node).ok_or_else(|| bad(name, format!("unknown node {node}")))
        };

        let mut seen = 0usize;
        for rec in body("control.csv")? {
            let k = cycle_of("control.csv", int("control.csv", &rec[0])?)?;
            let j = plant_of("control.csv", &rec[2])?;
            let c = &mut cycles[k];
            c.setpoint_p_w[j] = num("control.csv", &rec[3])?;
            c.setpoint_q_var[j] = num("control.csv", &rec[4])?;
            c.p_meas_w[j] = num("control.csv", &rec[5])?;
            c.q_meas_var[j] = num("control.csv", &rec[6])?;
            c.mpp_forecast_w[j] = num("control.csv", &rec[7])?;
            seen += 1;
        }
        if seen != cycles.len() * m {
            return Err(bad("control.csv", format!("{seen} rows for {} cycles", cycles.len())));
        }

        let split = |name: &str, coef: &str| -> Result<(bool, usize), HarnessError> {
            let (kind, bus) = coef.split_once(':').ok_or_else(|| bad(name, format!("coefficient `{coef}`")))?;
            let j = plant_of(name, bus)?;
            match kind {
                "kp" => Ok((true, j)),
                "kq" => Ok((false, j)),
                _ => Err(bad(name, format!("coefficient `{coef}`"))),
            }
        };
        let mut seen = 0usize;
        for rec in body("estimates.csv")? {
            let k = cycle_of("estimates.csv", int("estimates.csv", &rec[0])?)?;
            let i = node_of("estimates.csv", &rec[1])?;
            let (is_p, j) = split("estimates.csv", &rec[2])?;
            let (hat, delta) = (num("estimates.csv", &rec[3])?, num("estimates.csv", &rec[4])?);
            let e = &mut cycles[k].estimates[i];
            if is_p {
                e.kp[j] = hat;
                e.dkp[j] = delta;
            } else {
                e.kq[j] = hat;
                e.dkq[j] = delta;
            }
            seen += 1;
        }
        if seen != cycles.len() * n * m * 2 {
            return Err(bad("estimates.csv", format!("{seen} rows for {} cycles", cycles.len())));
        }
        let mut seen = 0usize;
        for rec in body("oracle.csv")? {
            let k = cycle_of("oracle.csv", int("oracle.csv", &rec[0])?)?;
            let i = node_of("oracle.csv", &rec[1])?;
            let (is_p, j) = split("oracle.csv", &rec[2])?;
            let value = num("oracle.csv", &rec[3])?;
            let o = &mut cycles[k].oracle[i];
            if is_p {
                o.kp[j] = value;
            } else {
                o.kq[j] = value;
            }
            seen += 1;
        }
        if seen != cycles.len() * n * m * 2 {
            return Err(bad("oracle.csv", format!("{seen} rows for {} cycles", cycles.len())));
        }
        Ok(Self { meta, seconds: Vec::new(), cycles, telemetry: None })
    }
}

impl PlantCoefficients {
    pub fn zeros(m: usize) -> Self {
        Self { kp: vec![0.0; m], kq: vec![0.0; m], dkp: vec![0.0; m], dkq: vec![0.0; m] }
    }
}
