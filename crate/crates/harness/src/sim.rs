//! The closed loop.
//!
//! Every second the current setpoints (capped by the true MPP) and the
//! replayed loads go through the AC power flow, and the result is measured
//! with transducer noise. Consecutive measurements give one regression row
//! `Δ|v| = Δp·K^p + Δq·K^q` per node. At the last second of every control
//! period the rows gathered since the previous cycle advance the recursive
//! estimators, the robust QP picks new setpoints from the estimates and the
//! MPP forecast, and the setpoints take effect from the next second.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use voltguard_core::control::{solve_robust, ControlError, ControlOptions, RobustControlProblem, SolveStatus};
use voltguard_core::estimation::{
    Forgetting, NodeEstimator, RegressionWindow, SelectiveForgetting, SensitivityEstimates, SlidingWindow,
};
use voltguard_core::forecast::{mpp_from_weather, persistence_forecast, WeatherSample};
use voltguard_core::grid::{linearized_voltage, oracle_columns, GridState, Injections, OracleOptions, PowerFlow};
use voltguard_core::linalg::{gram_rank, Matrix};
use voltguard_telemetry::{Concentrator, Datagram, MeasurementDatagram, Publisher, Receiver};

use crate::clock::{Clock, MonotonicClock};
use crate::config::{ForgettingKind, SensitivitySource};
use crate::noise::{apply_noise, MeasurementSample, NoiseModel};
use crate::runlog::{CycleRecord, PlantCoefficients, PlantInfo, RunLog, RunMeta, SecondRecord, TelemetrySummary};
use crate::scenario::Scenario;
use crate::HarnessError;

/// Relative eigenvalue cut below which the window's `HᵀH` counts as rank
/// deficient.
pub const RANK_TOLERANCE: f64 = 1e-8;

pub struct RunOptions {
    /// `false` replays the day with every plant at its MPP and no control.
    pub control: bool,
    pub seed: Option<u64>,
    pub telemetry: Option<bool>,
    pub clock: Box<dyn Clock>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { control: true, seed: None, telemetry: None, clock: Box::new(MonotonicClock::new()) }
    }
}

impl RunOptions {
    pub fn baseline() -> Self {
        Self { control: false, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_clock(mut self, clock: impl Clock + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }
}

/// Replay with `p = MPP`, `q = 0` at every plant.
pub fn no_control_baseline(scenario: &Scenario, opts: RunOptions) -> Result<RunLog, HarnessError> {
    run_day(scenario, RunOptions { control: false, ..opts })
}

fn mpp_w(scn: &Scenario, plant: usize, t: u64) -> f64 {
    let w = WeatherSample { ghi: scn.profiles.ghi(t), air_temp: scn.profiles.temp(t), timestamp: t };
    mpp_from_weather(&scn.plants[plant].model, &w)
}

/// Output of a plant asked for `(p, q)`: `p` capped by the available power,
/// `q` by the power-factor cone and the apparent-power circle.
fn actuate(scn: &Scenario, plant: usize, p: f64, q: f64, mpp: f64) -> (f64, f64) {
    let c = &scn.plants[plant].control;
    let p = p.clamp(0.0, mpp.min(c.s_max_va));
    if !c.reactive_capable {
        return (p, 0.0);
    }
    let q_max = (c.zeta() * p).min((c.s_max_va * c.s_max_va - p * p).max(0.0).sqrt());
    (p, q.clamp(-q_max, q_max))
}

struct Truth {
    injections: Injections<f64>,
    slack_v: f64,
}

fn truth_at(scn: &Scenario, t: u64, p_w: &[f64], q_var: &[f64]) -> Truth {
    let n = scn.n_nodes();
    let s_base = scn.network.s_base_va;
    let mut inj = Injections::zeros(n);
    for l in &scn.loads {
        let (p, q) = scn.profiles.load_at(&l.bus, t);
        inj.p[l.node] += p / s_base;
        inj.q[l.node] += q / s_base;
    }
    for (j, pl) in scn.plants.iter().enumerate() {
        inj.p[pl.node] += p_w[j] / s_base;
        inj.q[pl.node] += q_var[j] / s_base;
    }
    Truth { injections: inj, slack_v: scn.profiles.slack_v(t) }
}

fn solve(
    pf: &PowerFlow<f64>,
    truth: &Truth,
    warm: Option<&GridState<f64>>,
) -> Result<GridState<f64>, voltguard_core::grid::PowerFlowError> {
    match warm {
        Some(w) => pf.solve_from(&truth.injections, truth.slack_v, w).or_else(|_| pf.solve(&truth.injections, truth.slack_v)),
        None => pf.solve(&truth.injections, truth.slack_v),
    }
}

fn sample_of(scn: &Scenario, t: u64, state: &GridState<f64>, inj: &Injections<f64>) -> MeasurementSample {
    MeasurementSample {
        t,
        v: state.non_slack_v(scn.network.slack_bus()),
        p: scn.regressors.iter().map(|&r| inj.p[r]).collect(),
        q: scn.regressors.iter().map(|&r| inj.q[r]).collect(),
    }
}

/// Regression row between consecutive measurements: per-node `Δ|v|` and the
/// shared `[Δp; Δq]` over the regressor buses.
fn row(prev: &MeasurementSample, cur: &MeasurementSample) -> (Vec<f64>, Vec<f64>) {
    let gamma = cur.v.iter().zip(&prev.v).map(|(a, b)| a - b).collect();
    let h = cur.p.iter().zip(&prev.p).chain(cur.q.iter().zip(&prev.q)).map(|(a, b)| a - b).collect();
    (gamma, h)
}

/// LS fit over a simulated previous-day segment with the plants dithered
/// below their MPP.
fn bootstrap(scn: &Scenario, pf: &PowerFlow<f64>, seed: u64) -> Result<Vec<NodeEstimator<f64>>, HarnessError> {
    let e = &scn.config.estimation;
    let noise = NoiseModel::from_config(&scn.config.noise);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let n = scn.n_nodes();
    let m = scn.plants.len();
    let width = 2 * scn.regressors.len();
    let mut gammas: Vec<Vec<f64>> = vec![Vec::with_capacity(e.bootstrap_samples); n];
    let mut rows: Vec<f64> = Vec::with_capacity(e.bootstrap_samples * width);
    let mut prev: Option<MeasurementSample> = None;
    let mut warm: Option<GridState<f64>> = None;
    for k in 0..e.bootstrap_samples as u64 {
        let t = e.bootstrap_start_s + k;
        let mut p = vec![0.0; m];
        let mut q = vec![0.0; m];
        for j in 0..m {
            let mpp = mpp_w(scn, j, t);
            let u: f64 = rng.random();
            let w: f64 = rng.random();
            let target_p = mpp * (1.0 - e.bootstrap_dither * u);
            let zeta = scn.plants[j].control.zeta();
            (p[j], q[j]) = actuate(scn, j, target_p, (2.0 * w - 1.0) * e.bootstrap_dither * zeta * target_p, mpp);
        }
        let truth = truth_at(scn, t, &p, &q);
        let state = solve(pf, &truth, warm.as_ref()).map_err(|err| {
            HarnessError::Estimation(format!("bootstrap power flow at t={t}: {err}"))
        })?;
        let meas = apply_noise(&sample_of(scn, t, &state, &truth.injections), &noise, &mut rng);
        if let Some(prev) = &prev {
            let (g, h) = row(prev, &meas);
            gammas.iter_mut().zip(&g).for_each(|(col, &x)| col.push(x));
            rows.extend_from_slice(&h);
        }
        prev = Some(meas);
        warm = Some(state);
    }
    let h = Matrix::from_row_slice(rows.len() / width, width, &rows);
    (0..n)
        .map(|i| {
            let window = RegressionWindow::from_rows(gammas[i].clone(), h.clone())
                .map_err(|err| HarnessError::Estimation(err.to_string()))?;
            NodeEstimator::bootstrap(i, scn.regressors.clone(), &window, e.lambda_reg, e.mu)
                .map_err(|err| HarnessError::Estimation(format!("bootstrap of node {}: {err}", scn.node_names[i])))
        })
        .collect()
}

fn forgetting(scn: &Scenario) -> Forgetting<f64> {
    let e = &scn.config.estimation;
    let width = 2 * scn.regressors.len();
    match e.forgetting {
        ForgettingKind::Exponential => Forgetting::Exponential { mu: e.mu, cov_cap: e.cov_cap },
        ForgettingKind::Selective => {
            let mut sf = SelectiveForgetting::new(e.tau_min, e.tau_max, width);
            sf.eig_mu = vec![e.eig_mu; width];
            Forgetting::Selective(sf)
        }
    }
}

fn plant_coefficients(scn: &Scenario, kp: &[f64], kq: &[f64], dkp: &[f64], dkq: &[f64]) -> PlantCoefficients {
    let pick = |v: &[f64]| scn.plants.iter().map(|p| v[p.node]).collect();
    PlantCoefficients { kp: pick(kp), kq: pick(kq), dkp: pick(dkp), dkq: pick(dkq) }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

struct Telemetry {
    publisher: Publisher,
    receiver: Receiver,
    /// `(sensor id, non-slack position)` per monitored bus.
    sensors: Vec<(u16, usize)>,
}

impl Telemetry {
    fn start(scn: &Scenario) -> Result<Self, HarnessError> {
        let cfg = &scn.config.telemetry;
        let nodes: Vec<usize> = if cfg.monitored.is_empty() {
            (0..scn.n_nodes()).collect()
        } else {
            cfg.monitored
                .iter()
                .map(|b| scn.node_names.iter().position(|x| x == b).ok_or_else(|| HarnessError::Telemetry(format!("unknown bus {b}"))))
                .collect::<Result<_, _>>()?
        };
        let sensors: Vec<(u16, usize)> = nodes.iter().enumerate().map(|(k, &i)| (k as u16, i)).collect();
        let conc = Concentrator::new(sensors.iter().map(|s| s.0).collect(), 1000, cfg.window_ms);
        let receiver = Receiver::spawn(cfg.listen.as_str(), conc, cfg.queue_capacity)
            .map_err(|e| HarnessError::Telemetry(format!("bind {}: {e}", cfg.listen)))?;
        let publisher = Publisher::bind("127.0.0.1:0", vec![receiver.local_addr()])
            .map_err(|e| HarnessError::Telemetry(format!("publisher: {e}")))?;
        Ok(Self { publisher, receiver, sensors })
    }

    fn publish(&mut self, scn: &Scenario, meas: &MeasurementSample) {
        let bus_of = |i: usize| scn.network.non_slack_buses()[i];
        let datagrams: Vec<Datagram> = self
            .sensors
            .iter()
            .map(|&(id, i)| {
                let (p, q) = match scn.regressor_index(i) {
                    Some(r) => (meas.p[r] * scn.network.s_base_va, meas.q[r] * scn.network.s_base_va),
                    None => (0.0, 0.0),
                };
                Datagram::Measurement(MeasurementDatagram {
                    sensor: id,
                    bus: bus_of(i) as u16,
                    timestamp_ms: meas.t * 1000,
                    v_pu: meas.v[i],
                    p_w: p as f32,
                    q_var: q as f32,
                })
            })
            .collect();
        self.publisher.publish(&datagrams);
        // Keep the frame queue short; the loop only reports counters.
        while self.receiver.frames().try_pop().is_some() {}
    }

    fn finish(self) -> TelemetrySummary {
        std::thread::sleep(Duration::from_millis(50));
        let (stats, _) = self.receiver.shutdown();
        TelemetrySummary {
            datagrams_sent: self.publisher.sent(),
            send_errors: self.publisher.send_errors(),
            received: stats.received,
            crc_failures: stats.crc_failures,
            complete_frames: stats.concentrator.complete_frames,
            partial_frames: stats.concentrator.partial_frames,
            late: stats.concentrator.late,
            duplicates: stats.concentrator.duplicates,
            queue_dropped: stats.queue_dropped,
        }
    }
}

fn meta(scn: &Scenario, seed: u64, controlled: bool) -> RunMeta {
    let c = &scn.config;
    RunMeta {
        schema_version: crate::runlog::LOG_SCHEMA_VERSION,
        scenario: c.name.clone(),
        seed,
        controlled,
        node_names: scn.node_names.clone(),
        plants: scn
            .plants
            .iter()
            .map(|p| PlantInfo {
                name: p.name.clone(),
                bus: p.bus.clone(),
                node: p.node,
                s_max_va: p.control.s_max_va,
                pf_min: p.control.pf_min,
                reactive_capable: p.control.reactive_capable,
            })
            .collect(),
        s_base_va: scn.network.s_base_va,
        v_min: c.control.v_min,
        v_max: c.control.v_max,
        v_margin: c.control.v_margin,
        xi: c.xi(),
        alpha: c.estimation.alpha,
        control_period_s: c.timing.control_period_s,
    }
}

/// Runs the scenario's day. With `opts.control == false` this is the
/// uncontrolled replay and neither the estimators nor the controller run.
pub fn run_day(scn: &Scenario, mut opts: RunOptions) -> Result<RunLog, HarnessError> {
    let cfg = &scn.config;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let timing = &cfg.timing;
    let n = scn.n_nodes();
    let m = scn.plants.len();
    let s_base = scn.network.s_base_va;
    let pf: PowerFlow<f64> = PowerFlow::new(&scn.network);
    let noise = NoiseModel::from_config(&cfg.noise);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);

    let mut estimators = if opts.control { bootstrap(scn, &pf, seed)? } else { Vec::new() };
    let forgetting = forgetting(scn);
    let plant_cfgs = scn.plant_configs();
    let plant_nodes: Vec<usize> = scn.plants.iter().map(|p| p.node).collect();
    let control_opts = ControlOptions {
        polygon_segments: cfg.control.polygon_segments,
        coupling: cfg.control.coupling,
        regularization: cfg.control.regularization,
    };
    let width = 2 * scn.regressors.len();
    // Regressor columns that can vary: the q column of a plant without
    // reactive capability is identically zero.
    let excited: Vec<usize> = (0..width)
        .filter(|&c| {
            let r = scn.regressors.len();
            c < r || !scn.plants.iter().any(|p| !p.control.reactive_capable && scn.regressor_index(p.node) == Some(c - r))
        })
        .collect();
    let mut window: SlidingWindow<f64> = SlidingWindow::new(timing.window_samples, width);
    let mut pending: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(timing.control_period_s as usize);
    let budget = Duration::from_millis(timing.cycle_budget_ms);

    let mut telemetry = match opts.telemetry.unwrap_or(cfg.telemetry.enabled) {
        true => Some(Telemetry::start(scn)?),
        false => None,
    };
    let mut log = RunLog {
        meta: meta(scn, seed, opts.control),
        seconds: Vec::with_capacity(timing.duration_s as usize),
        cycles: Vec::new(),
        telemetry: None,
    };

    // Setpoints in force, and the latest decided ones.
    let (mut act_p, mut act_q) = (vec![0.0; m], vec![0.0; m]);
    let mut sp_p = vec![0.0; m];
    let mut sp_q = vec![0.0; m];
    let mut scheduled: Option<(u64, Vec<f64>, Vec<f64>)> = None;
    let delay = timing.actuation_delay_s;
    let mut forecast = vec![0.0; m];
    let mut prev: Option<MeasurementSample> = None;
    let mut warm: Option<GridState<f64>> = None;
    for t in timing.start_s..timing.start_s + timing.duration_s {
        if scheduled.as_ref().is_some_and(|s| s.0 == t) {
            let (_, p, q) = scheduled.take().expect("checked above");
            (act_p, act_q) = (p, q);
        }
        let mpp: Vec<f64> = (0..m).map(|j| mpp_w(scn, j, t)).collect();
        let mut p = vec![0.0; m];
        let mut q = vec![0.0; m];
        for j in 0..m {
            (p[j], q[j]) = if opts.control { actuate(scn, j, act_p[j], act_q[j], mpp[j]) } else { actuate(scn, j, mpp[j], 0.0, mpp[j]) };
        }
        let truth = truth_at(scn, t, &p, &q);
        let state = match solve(&pf, &truth, warm.as_ref()) {
            Ok(s) => s,
            Err(e) => {
                if let Some(tel) = telemetry.take() {
                    log.telemetry = Some(tel.finish());
                }
                return Err(HarnessError::PowerFlowDiverged { t, message: e.to_string(), partial: Box::new(log) });
            }
        };
        let true_sample = sample_of(scn, t, &state, &truth.injections);
        let meas = apply_noise(&true_sample, &noise, &mut rng);
        if let Some(tel) = telemetry.as_mut() {
            tel.publish(scn, &meas);
        }
        if let Some(last) = log.cycles.last_mut() {
            if last.v_next.is_empty() && t == last.t + 1 + delay {
                last.v_next = true_sample.v.clone();
            }
        }
        if let Some(prev) = &prev {
            let (g, h) = row(prev, &meas);
            if opts.control {
                window.push(t, g[0], h.clone());
                pending.push((g, h));
            }
        }
        log.seconds.push(SecondRecord {
            t,
            slack_v: truth.slack_v,
            v_true: true_sample.v.clone(),
            v_meas: meas.v.clone(),
            p_w: p,
            q_var: q,
            mpp_w: mpp,
        });

        if opts.control && (t - timing.start_s + 1) % timing.control_period_s == 0 {
            let oracle_start = Instant::now();
            let oracle = oracle_columns(&pf, &state, OracleOptions::default(), &plant_nodes)
                .map_err(|e| HarnessError::PowerFlowDiverged { t, message: format!("oracle: {e}"), partial: Box::new(log.clone()) })?;
            let oracle_ms = ms(oracle_start.elapsed());

            let c0 = opts.clock.now();
            let est_start = Instant::now();
            let mut est_failed = false;
            for (g, h) in pending.drain(..) {
                for (i, est) in estimators.iter_mut().enumerate() {
                    if est.update(g[i], &h, &forgetting).is_err() {
                        est_failed = true;
                    }
                }
            }
            let estimates = match cfg.estimation.source {
                SensitivitySource::Estimated => SensitivityEstimates {
                    nodes: estimators.iter().map(|e| e.estimate(n, cfg.estimation.alpha)).collect(),
                },
                SensitivitySource::Oracle => SensitivityEstimates::from_matrix(&oracle),
            };
            let estimator_ms = ms(est_start.elapsed());

            let ctl_start = Instant::now();
            for j in 0..m {
                let latest = Some((t, mpp_w(scn, j, t)));
                if let Ok(f) = persistence_forecast(latest, t, timing.sample_period_s) {
                    forecast[j] = f;
                }
            }
            let r_idx: Vec<usize> = plant_nodes.iter().map(|&nd| scn.regressor_index(nd).expect("plant bus is a regressor")).collect();
            let problem = RobustControlProblem {
                v_prev: meas.v.clone(),
                p_meas: r_idx.iter().map(|&r| meas.p[r]).collect(),
                q_meas: r_idx.iter().map(|&r| meas.q[r]).collect(),
                mpp: forecast.iter().map(|f| f / s_base).collect(),
                estimates,
                v_min: cfg.control.v_min,
                v_max: cfg.control.v_max,
                xi: vec![cfg.xi(); n],
                power_unit_va: s_base,
                v_margin: cfg.control.v_margin,
            };
            let solved = solve_robust(&problem, &plant_cfgs, &control_opts);
            let controller_ms = ms(ctl_start.elapsed());
            let elapsed = opts.clock.now().saturating_sub(c0);

            // Anything but a timely optimum keeps the previous setpoints.
            let (status, objective) = match &solved {
                _ if elapsed > budget => (SolveStatus::DeadlineMissed, f64::NAN),
                _ if est_failed => (SolveStatus::Fallback, f64::NAN),
                Ok(s) => {
                    sp_p = s.p.iter().map(|x| x * s_base).collect();
                    sp_q = s.q.iter().map(|x| x * s_base).collect();
                    scheduled = Some((t + 1 + delay, sp_p.clone(), sp_q.clone()));
                    (SolveStatus::Optimal, s.objective)
                }
                Err(ControlError::Qp(e)) => (SolveStatus::from(e), f64::NAN),
                Err(_) => (SolveStatus::Fallback, f64::NAN),
            };

            let mut dp = vec![0.0; n];
            let mut dq = vec![0.0; n];
            for j in 0..m {
                dp[plant_nodes[j]] = sp_p[j] / s_base - problem.p_meas[j];
                dq[plant_nodes[j]] = sp_q[j] / s_base - problem.q_meas[j];
            }
            let v_pred = linearized_voltage(&problem.v_prev, &problem.estimates, &dp, &dq);
            let rank_deficient = window.len() < excited.len()
                || window
                    .to_window(timing.sample_period_s)
                    .ok()
                    .and_then(|w| {
                        let h = Matrix::from_fn(w.len(), excited.len(), |k, c| w.h()[(k, excited[c])]);
                        gram_rank(&h, RANK_TOLERANCE).ok()
                    })
                    .is_none_or(|r| r < excited.len());

            let estimates_log = problem
                .estimates
                .nodes
                .iter()
                .map(|e| plant_coefficients(scn, &e.kp_hat, &e.kq_hat, &e.dkp, &e.dkq))
                .collect();
            let zeros = vec![0.0; n];
            let oracle_log = (0..n)
                .map(|i| plant_coefficients(scn, oracle.kp.row(i), oracle.kq.row(i), &zeros, &zeros))
                .collect();
            log.cycles.push(CycleRecord {
                t,
                status,
                objective_pu2: objective,
                setpoint_p_w: sp_p.clone(),
                setpoint_q_var: sp_q.clone(),
                p_meas_w: problem.p_meas.iter().map(|x| x * s_base).collect(),
                q_meas_var: problem.q_meas.iter().map(|x| x * s_base).collect(),
                mpp_forecast_w: forecast.clone(),
                v_prev: problem.v_prev.clone(),
                v_pred,
                v_next: Vec::new(),
                rank_deficient,
                estimates: estimates_log,
                oracle: oracle_log,
                estimator_ms,
                controller_ms,
                oracle_ms,
                budget_ms: ms(elapsed),
            });
        }
        prev = Some(meas);
        warm = Some(state);
    }
    if let Some(tel) = telemetry {
        log.telemetry = Some(tel.finish());
    }
    Ok(log)
}
