//! Post-run analysis of a [`RunLog`]: interval-quality metrics of the
//! estimated coefficients against the finite-difference oracle, and a
//! vertex-enumeration audit of every optimal control cycle.

use std::fmt::Write as _;

use voltguard_core::control::{verify_robustness, PvPlantConfig, RobustControlProblem, Setpoint, SolveStatus};
use voltguard_core::control::KktReport;
use voltguard_core::estimation::{SensitivityEstimate, SensitivityEstimates};
use voltguard_core::metrics::{cwc, pinaw, picp, rmse, EtaConvention, IntervalSeries};

use crate::runlog::{CycleRecord, RunLog};
use crate::HarnessError;

/// Weight of the coverage penalty in the CWC.
pub const CWC_NU: f64 = 50.0;
/// A cycle counts as daylight when every plant's MPP forecast exceeds this
/// fraction of its rating.
pub const DAYLIGHT_MPP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Period {
    Day,
    Daylight,
}

impl Period {
    pub fn as_str(&self) -> &'static str {
        match self {
            Period::Day => "day",
            Period::Daylight => "daylight",
        }
    }
}

/// Metrics of one coefficient `K_{node, plant}` over one period. Values are
/// NaN when undefined (no steps, or an all-zero truth).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMetrics {
    /// `kp` or `kq`.
    pub kind: &'static str,
    pub node: String,
    pub plant_bus: String,
    pub period: Period,
    pub steps: usize,
    pub rmse: f64,
    pub picp: f64,
    pub pinaw: f64,
    pub cwc: f64,
}

impl CoefficientMetrics {
    pub fn label(&self) -> String {
        format!("{}[{},{}]", self.kind, self.node, self.plant_bus)
    }

    pub fn is_self(&self) -> bool {
        self.node == self.plant_bus
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub alpha: f64,
    pub convention: EtaConvention,
    pub rows: Vec<CoefficientMetrics>,
}

pub fn is_daylight(log: &RunLog, c: &CycleRecord) -> bool {
    log.meta.plants.iter().zip(&c.mpp_forecast_w).all(|(p, &m)| m > DAYLIGHT_MPP_FRACTION * p.s_max_va)
}

fn series_metrics(s: &IntervalSeries<f64>, alpha: f64, convention: EtaConvention) -> (f64, f64, f64, f64) {
    if s.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let r = rmse(&s.truth, &s.hat).unwrap_or(f64::NAN);
    let c = picp(s);
    let w = pinaw(s).unwrap_or(f64::NAN);
    (r, c, w, cwc(c, w, alpha, CWC_NU, convention))
}

/// Metrics of every coefficient between a plant bus and a plant, for the
/// whole day and for daylight cycles. `kq` rows are omitted for plants
/// without reactive capability.
pub fn metrics_report(log: &RunLog, convention: EtaConvention) -> Result<MetricsReport, HarnessError> {
    if log.cycles.is_empty() {
        return Err(HarnessError::Log("run log has no control cycles".into()));
    }
    let alpha = log.meta.alpha;
    let mut rows = Vec::new();
    for node_plant in &log.meta.plants {
        let i = node_plant.node;
        for (j, plant) in log.meta.plants.iter().enumerate() {
            for kind in ["kp", "kq"] {
                if kind == "kq" && !plant.reactive_capable {
                    continue;
                }
                for period in [Period::Day, Period::Daylight] {
                    let mut s = IntervalSeries { truth: Vec::new(), hat: Vec::new(), half_width: Vec::new() };
                    for c in log.cycles.iter().filter(|c| period == Period::Day || is_daylight(log, c)) {
                        let (e, o) = (&c.estimates[i], &c.oracle[i]);
                        match kind {
                            "kp" => s.push(o.kp[j], e.kp[j], e.dkp[j]),
                            _ => s.push(o.kq[j], e.kq[j], e.dkq[j]),
                        }
                    }
                    let (rmse, picp, pinaw, cwc) = series_metrics(&s, alpha, convention);
                    rows.push(CoefficientMetrics {
                        kind,
                        node: node_plant.bus.clone(),
                        plant_bus: plant.bus.clone(),
                        period,
                        steps: s.len(),
                        rmse,
                        picp,
                        pinaw,
                        cwc,
                    });
                }
            }
        }
    }
    Ok(MetricsReport { alpha, convention, rows })
}

impl MetricsReport {
    pub fn find(&self, kind: &str, node: &str, plant_bus: &str, period: Period) -> Option<&CoefficientMetrics> {
        self.rows.iter().find(|r| r.kind == kind && r.node == node && r.plant_bus == plant_bus && r.period == period)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# voltguard metrics v1\ncoefficient,period,steps,rmse,picp,cwc,pinaw\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "\"{}\",{},{},{:.6},{:.6},{:.6},{:.6}",
                r.label(),
                r.period.as_str(),
                r.steps,
                r.rmse,
                r.picp,
                r.cwc,
                r.pinaw
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let conv = match self.convention {
            EtaConvention::CoveragePenalty => "coverage-penalty",
            EtaConvention::Printed => "printed",
        };
        let mut s = format!("alpha = {}, nu = {CWC_NU}, eta convention: {conv}\n", self.alpha);
        let _ = writeln!(s, "{:<16} {:<9} {:>6} {:>8}  PICP - CWC - PINAW", "coefficient", "period", "steps", "RMSE");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:<9} {:>6} {:>8.3}  {:.2} - {:.2} - {:.2}",
                r.label(),
                r.period.as_str(),
                r.steps,
                r.rmse,
                r.picp,
                r.cwc,
                r.pinaw
            );
        }
        s
    }
}

/// Worst-case voltages of one cycle over every sign vertex of the logged
/// coefficient intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleAudit {
    pub t: u64,
    pub worst_max: f64,
    pub worst_min: f64,
    /// Largest true voltage once the setpoints were in force, if logged.
    pub realized_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub v_max: f64,
    pub v_min: f64,
    pub v_margin: f64,
    pub xi: f64,
    pub cycles: usize,
    pub audited: usize,
    pub audits: Vec<CycleAudit>,
}

/// Tolerance on the worst-case bound check.
pub const VERIFY_TOL: f64 = 1e-6;

impl VerifyReport {
    /// Largest excess of a worst-case voltage over the tightened upper bound.
    pub fn max_upper_violation(&self) -> f64 {
        let bound = self.v_max - self.v_margin;
        self.audits.iter().map(|a| a.worst_max - bound).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_lower_violation(&self) -> f64 {
        let bound = self.v_min + self.v_margin;
        self.audits.iter().map(|a| bound - a.worst_min).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn violations(&self) -> usize {
        let (hi, lo) = (self.v_max - self.v_margin + VERIFY_TOL, self.v_min + self.v_margin - VERIFY_TOL);
        self.audits.iter().filter(|a| a.worst_max > hi || a.worst_min < lo).count()
    }

    pub fn realized_above_v_max(&self) -> usize {
        self.audits.iter().filter(|a| a.realized_max.is_some_and(|v| v > self.v_max)).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cycles: {}, audited (optimal): {}, budget xi = {}", self.cycles, self.audited, self.xi);
        let _ = writeln!(s, "bounds: [{}, {}] with margin {}", self.v_min, self.v_max, self.v_margin);
        let _ = writeln!(s, "max worst-case upper excess: {:.3e} pu", self.max_upper_violation());
        let _ = writeln!(s, "max worst-case lower excess: {:.3e} pu", self.max_lower_violation());
        let _ = writeln!(s, "cycles violating a worst-case bound (tol {VERIFY_TOL:e}): {}", self.violations());
        let _ = writeln!(s, "cycles with realized voltage above v_max: {}", self.realized_above_v_max());
        s
    }
}

/// Rebuilds the control problem of a logged cycle. Only the plant columns of
/// the estimates are logged, which are the only ones the problem uses.
pub fn problem_of(log: &RunLog, c: &CycleRecord) -> RobustControlProblem<f64> {
    let n = log.n_nodes();
    let s_base = log.meta.s_base_va;
    let nodes = c
        .estimates
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut est = SensitivityEstimate {
                node: i,
                kp_hat: vec![0.0; n],
                kq_hat: vec![0.0; n],
                dkp: vec![0.0; n],
                dkq: vec![0.0; n],
                confidence: log.meta.alpha,
            };
            for (j, p) in log.meta.plants.iter().enumerate() {
                est.kp_hat[p.node] = e.kp[j];
                est.kq_hat[p.node] = e.kq[j];
                est.dkp[p.node] = e.dkp[j];
                est.dkq[p.node] = e.dkq[j];
            }
            est
        })
        .collect();
    RobustControlProblem {
        v_prev: c.v_prev.clone(),
        p_meas: c.p_meas_w.iter().map(|x| x / s_base).collect(),
        q_meas: c.q_meas_var.iter().map(|x| x / s_base).collect(),
        mpp: c.mpp_forecast_w.iter().map(|x| x / s_base).collect(),
        estimates: SensitivityEstimates { nodes },
        v_min: log.meta.v_min,
        v_max: log.meta.v_max,
        xi: vec![log.meta.xi; n],
        power_unit_va: s_base,
        v_margin: log.meta.v_margin,
    }
}

pub fn plant_configs_of(log: &RunLog) -> Vec<PvPlantConfig> {
    log.meta
        .plants
        .iter()
        .map(|p| PvPlantConfig { node: p.node, s_max_va: p.s_max_va, pf_min: p.pf_min, reactive_capable: p.reactive_capable })
        .collect()
}

/// Enumerates the interval vertices of every optimal cycle.
pub fn verify_report(log: &RunLog) -> Result<VerifyReport, HarnessError> {
    if log.cycles.is_empty() {
        return Err(HarnessError::Log("run log has no control cycles".into()));
    }
    let plants = plant_configs_of(log);
    let s_base = log.meta.s_base_va;
    let mut audits = Vec::new();
    for c in log.cycles.iter().filter(|c| c.status == SolveStatus::Optimal) {
        let problem = problem_of(log, c);
        let setpoint = Setpoint {
            p: c.setpoint_p_w.iter().map(|x| x / s_base).collect(),
            q: c.setpoint_q_var.iter().map(|x| x / s_base).collect(),
            status: c.status,
            objective: c.objective_pu2,
            z: Vec::new(),
            g: Vec::new(),
            yp: Vec::new(),
            yq: Vec::new(),
            kkt: KktReport { stationarity: 0.0, primal_infeasibility: 0.0, dual_infeasibility: 0.0, complementarity: 0.0 },
            iterations: 0,
        };
        let r = verify_robustness(&setpoint, &problem, &plants).map_err(|e| HarnessError::Log(format!("t={}: {e}", c.t)))?;
        audits.push(CycleAudit {
            t: c.t,
            worst_max: r.worst_max.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            worst_min: r.worst_min.iter().copied().fold(f64::INFINITY, f64::min),
            realized_max: (!c.v_next.is_empty()).then(|| c.v_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        });
    }
    Ok(VerifyReport {
        v_max: log.meta.v_max,
        v_min: log.meta.v_min,
        v_margin: log.meta.v_margin,
        xi: log.meta.xi,
        cycles: log.cycles.len(),
        audited: audits.len(),
        audits,
    })
}
