//! Robust voltage-control QP: curtail PV active power and dispatch reactive
//! power so that every nodal voltage stays in `[v_min, v_max]` for all
//! coefficient realizations inside the estimated intervals, up to a budget
//! of uncertainty per node.
//!
//! Decision variables, in this order:
//!
//! | block | size     | meaning                                        |
//! |-------|----------|------------------------------------------------|
//! | `p`   | `m`      | plant active power setpoints                   |
//! | `q`   | `m`      | plant reactive power setpoints                 |
//! | `y^p` | `m`      | bound on `|p − p_meas|`                        |
//! | `y^q` | `m`      | bound on `|q − q_meas|`                        |
//! | `z`   | `N_b`    | per-node budget multiplier                     |
//! | `g`   | `N_b·m`  | per-node, per-plant protection                 |
//!
//! Internally every power is divided by the largest plant rating so that the
//! QP is well scaled whatever units the caller uses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::qp::{solve_qp_with, KktReport, QpError, QpOptions, QuadraticProgram};
use super::ControlError;
use crate::estimation::SensitivityEstimates;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// PV plant as seen by the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvPlantConfig {
    /// Non-slack position of the plant's bus.
    pub node: usize,
    /// Converter rating in VA.
    pub s_max_va: f64,
    pub pf_min: f64,
    pub reactive_capable: bool,
}

impl PvPlantConfig {
    /// `ζ = sqrt((1 − PF²)/PF²)`: the largest `|q|/p` allowed by the power factor limit.
    pub fn zeta(&self) -> f64 {
        let pf2 = self.pf_min * self.pf_min;
        ((1.0 - pf2) / pf2).sqrt()
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.pf_min > 0.0 && self.pf_min <= 1.0) {
            return Err(ControlError::InconsistentDimensions(format!("pf_min {} outside (0, 1]", self.pf_min)));
        }
        if !(self.s_max_va > 0.0) {
            return Err(ControlError::InconsistentDimensions(format!("s_max_va {} must be positive", self.s_max_va)));
        }
        Ok(())
    }
}

/// How the per-plant protection `g_ij` is tied to the interval half-widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectionCoupling {
    /// `z_i + g_ij ≥ ΔK^p_ij y^p_j + ΔK^q_ij y^q_j`: each plant is one uncertain
    /// unit, so a full budget covers the whole coefficient box.
    #[default]
    Summed,
    /// `z_i + g_ij ≥ ΔK^p_ij y^p_j` and `z_i + g_ij ≥ ΔK^q_ij y^q_j`.
    Separate,
    /// As `Separate`, but with the reactive half-width multiplying `y^p_j`.
    PrintedVariant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOptions {
    /// Number of edges of the polygon inscribed in the capability circle.
    pub polygon_segments: usize,
    pub coupling: ProtectionCoupling,
    /// Diagonal weight on the auxiliary variables, which otherwise have no
    /// curvature. Applied in the internal scaling.
    pub regularization: f64,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self { polygon_segments: 16, coupling: ProtectionCoupling::Summed, regularization: 1e-8 }
    }
}

/// Inputs of one control cycle. Powers are in an arbitrary unit of
/// `power_unit_va` VA; coefficients are pu voltage per that unit.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustControlProblem<T> {
    /// Measured non-slack voltage magnitudes at the previous step (pu).
    pub v_prev: Vec<T>,
    /// Last measured plant injections.
    pub p_meas: Vec<T>,
    pub q_meas: Vec<T>,
    /// Maximum power potential forecast per plant.
    pub mpp: Vec<T>,
    pub estimates: SensitivityEstimates<T>,
    pub v_min: T,
    pub v_max: T,
    /// Budget of uncertainty per node, within `[0, number of plants]`.
    pub xi: Vec<T>,
    pub power_unit_va: T,
    /// Extra tightening of both voltage bounds (pu).
    pub v_margin: T,
}

/// Structured QP plus the bookkeeping needed to read the solution back.
#[derive(Debug, Clone)]
pub struct RobustQp<T> {
    pub qp: QuadraticProgram<T>,
    pub n_plants: usize,
    pub n_nodes: usize,
    /// Problem power units per internal unit.
    pub scale: T,
    pub mpp: Vec<T>,
    /// Whether the auxiliary robust blocks exist.
    pub robust: bool,
}

impl<T: Scalar> RobustQp<T> {
    pub fn n_vars(&self) -> usize {
        self.qp.n_vars()
    }
    fn p(&self, j: usize) -> usize {
        j
    }
    fn q(&self, j: usize) -> usize {
        self.n_plants + j
    }
    fn yp(&self, j: usize) -> usize {
        2 * self.n_plants + j
    }
    fn yq(&self, j: usize) -> usize {
        3 * self.n_plants + j
    }
    fn z(&self, i: usize) -> usize {
        4 * self.n_plants + i
    }
    fn g(&self, i: usize, j: usize) -> usize {
        4 * self.n_plants + self.n_nodes + i * self.n_plants + j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    /// Previous setpoint held (solver failure or missed deadline).
    Fallback,
    DeadlineMissed,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::Infeasible => "infeasible",
            Self::MaxIterations => "max_iterations",
            Self::Fallback => "fallback",
            Self::DeadlineMissed => "deadline_missed",
        }
    }
}

/// Per-plant setpoints with solver audit data.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint<T> {
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub status: SolveStatus,
    /// `Σ (p − p̂)² + q²` in problem units squared.
    pub objective: T,
    pub z: Vec<T>,
    /// Row-major `N_b × m`.
    pub g: Vec<T>,
    pub yp: Vec<T>,
    pub yq: Vec<T>,
    pub kkt: KktReport<T>,
    pub iterations: usize,
}

fn validate<T: Scalar>(problem: &RobustControlProblem<T>, plants: &[PvPlantConfig]) -> Result<(), ControlError> {
    let n = problem.v_prev.len();
    let m = plants.len();
    let dims = |what: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(ControlError::InconsistentDimensions(format!("{what}: {got} entries, expected {want}")))
        }
    };
    dims("p_meas", problem.p_meas.len(), m)?;
    dims("q_meas", problem.q_meas.len(), m)?;
    dims("mpp", problem.mpp.len(), m)?;
    dims("xi", problem.xi.len(), n)?;
    if problem.estimates.n() < n {
        return Err(ControlError::MissingEstimate(problem.estimates.n()));
    }
    for (i, e) in problem.estimates.nodes.iter().enumerate().take(n) {
        if e.kp_hat.len() != n || e.kq_hat.len() != n || e.dkp.len() != n || e.dkq.len() != n {
            return Err(ControlError::InconsistentDimensions(format!("estimate of node {i} does not span {n} buses")));
        }
    }
    for p in plants {
        p.validate()?;
        if p.node >= n {
            return Err(ControlError::InconsistentDimensions(format!("plant node {} outside 0..{n}", p.node)));
        }
    }
    if !(problem.v_min < problem.v_max) {
        return Err(ControlError::InconsistentDimensions("v_min must be below v_max".into()));
    }
    let m_t = T::lit(m as f64);
    if problem.xi.iter().any(|&x| !(x >= T::zero() && x <= m_t)) {
        return Err(ControlError::InconsistentDimensions(format!("budget xi must lie in [0, {m}]")));
    }
    if problem.mpp.iter().any(|&v| !(v >= T::zero())) {
        return Err(ControlError::InconsistentDimensions("mpp forecast must be non-negative".into()));
    }
    if !(problem.power_unit_va > T::zero()) {
        return Err(ControlError::InconsistentDimensions("power_unit_va must be positive".into()));
    }
    Ok(())
}

struct Rows<T> {
    n: usize,
    a: Vec<T>,
    b: Vec<T>,
}

impl<T: Scalar> Rows<T> {
    fn new(n: usize) -> Self {
        Self { n, a: Vec::new(), b: Vec::new() }
    }
    fn push(&mut self, entries: &[(usize, T)], rhs: T) {
        let start = self.a.len();
        self.a.resize(start + self.n, T::zero());
        for &(k, v) in entries {
            self.a[start + k] += v;
        }
        self.b.push(rhs);
    }
    fn into_parts(self) -> (Matrix<T>, Vec<T>) {
        let rows = self.b.len();
        (Matrix::from_row_slice(rows, self.n, &self.a), self.b)
    }
}

/// Builds the robust QP (`robust = true`) or the nominal QP that ignores the
/// half-widths and has no auxiliary variables.
pub fn build_qp<T: Scalar>(
    problem: &RobustControlProblem<T>,
    plants: &[PvPlantConfig],
    opts: &ControlOptions,
    robust: bool,
) -> Result<RobustQp<T>, ControlError> {
    validate(problem, plants)?;
    let n = problem.v_prev.len();
    let m = plants.len();
    let unit = problem.power_unit_va;
    let s_max: Vec<T> = plants.iter().map(|p| T::lit(p.s_max_va) / unit).collect();
    let scale = s_max.iter().fold(T::zero(), |a, &b| a.max(b));
    let to_int = |v: T| v / scale;

    let n_vars = if robust { 4 * m + n + n * m } else { 2 * m };
    let layout = RobustQp {
        qp: QuadraticProgram::new(Matrix::zeros(0, 0), Vec::new()),
        n_plants: m,
        n_nodes: n,
        scale,
        mpp: problem.mpp.clone(),
        robust,
    };

    let mut g = Matrix::zeros(n_vars, n_vars);
    let mut c = vec![T::zero(); n_vars];
    let reg = T::lit(2.0 * opts.regularization);
    for k in 0..n_vars {
        g[(k, k)] = reg;
    }
    for j in 0..m {
        g[(layout.p(j), layout.p(j))] = T::lit(2.0);
        g[(layout.q(j), layout.q(j))] = T::lit(2.0);
        c[layout.p(j)] = T::lit(-2.0) * to_int(problem.mpp[j]);
    }

    let mut ineq = Rows::new(n_vars);
    let mut eq = Rows::new(n_vars);
    let one = T::one();

    let segs = opts.polygon_segments.max(3);
    let apothem = T::lit((PI / segs as f64).cos());
    for (j, plant) in plants.iter().enumerate() {
        let (pj, qj) = (layout.p(j), layout.q(j));
        let smax = to_int(s_max[j]);
        let mpp = to_int(problem.mpp[j]).min(smax);
        ineq.push(&[(pj, one)], mpp);
        ineq.push(&[(pj, -one)], T::zero());
        for k in 0..segs {
            let theta = T::lit((2 * k + 1) as f64 * PI / segs as f64);
            ineq.push(&[(pj, theta.cos()), (qj, theta.sin())], smax * apothem);
        }
        let zeta = T::lit(plant.zeta());
        ineq.push(&[(qj, one), (pj, -zeta)], T::zero());
        ineq.push(&[(qj, -one), (pj, -zeta)], T::zero());
        if !plant.reactive_capable {
            eq.push(&[(qj, one)], T::zero());
        }
    }

    let est = &problem.estimates.nodes;
    for i in 0..n {
        let e = &est[i];
        // c_i = v_prev − Σ_j K̂ · measured injection
        let mut base = problem.v_prev[i];
        let mut nominal: Vec<(usize, T)> = Vec::with_capacity(2 * m + 1 + m);
        for (j, plant) in plants.iter().enumerate() {
            let kp = e.kp_hat[plant.node] * scale;
            let kq = e.kq_hat[plant.node] * scale;
            base -= kp * to_int(problem.p_meas[j]) + kq * to_int(problem.q_meas[j]);
            nominal.push((layout.p(j), kp));
            nominal.push((layout.q(j), kq));
        }
        let mut upper = nominal.clone();
        let mut lower: Vec<(usize, T)> = nominal.iter().map(|&(k, v)| (k, -v)).collect();
        if robust {
            for row in [&mut upper, &mut lower] {
                row.push((layout.z(i), problem.xi[i]));
                for j in 0..m {
                    row.push((layout.g(i, j), one));
                }
            }
        }
        ineq.push(&upper, problem.v_max - problem.v_margin - base);
        ineq.push(&lower, base - problem.v_min - problem.v_margin);
    }

    if robust {
        for j in 0..m {
            let (pj, qj, ypj, yqj) = (layout.p(j), layout.q(j), layout.yp(j), layout.yq(j));
            let pm = to_int(problem.p_meas[j]);
            let qm = to_int(problem.q_meas[j]);
            ineq.push(&[(pj, one), (ypj, -one)], pm);
            ineq.push(&[(pj, -one), (ypj, -one)], -pm);
            ineq.push(&[(qj, one), (yqj, -one)], qm);
            ineq.push(&[(qj, -one), (yqj, -one)], -qm);
            ineq.push(&[(ypj, -one)], T::zero());
            ineq.push(&[(yqj, -one)], T::zero());
        }
        for i in 0..n {
            let e = &est[i];
            ineq.push(&[(layout.z(i), -one)], T::zero());
            for (j, plant) in plants.iter().enumerate() {
                let dkp = e.dkp[plant.node] * scale;
                let dkq = e.dkq[plant.node] * scale;
                let (zi, gij, ypj, yqj) = (layout.z(i), layout.g(i, j), layout.yp(j), layout.yq(j));
                ineq.push(&[(gij, -one)], T::zero());
                match opts.coupling {
                    ProtectionCoupling::Summed => {
                        ineq.push(&[(ypj, dkp), (yqj, dkq), (zi, -one), (gij, -one)], T::zero());
                    }
                    ProtectionCoupling::Separate => {
                        ineq.push(&[(ypj, dkp), (zi, -one), (gij, -one)], T::zero());
                        ineq.push(&[(yqj, dkq), (zi, -one), (gij, -one)], T::zero());
                    }
                    ProtectionCoupling::PrintedVariant => {
                        ineq.push(&[(ypj, dkp), (zi, -one), (gij, -one)], T::zero());
                        ineq.push(&[(ypj, dkq), (zi, -one), (gij, -one)], T::zero());
                    }
                }
            }
        }
    }

    let (a_in, b_in) = ineq.into_parts();
    let (a_eq, b_eq) = eq.into_parts();
    let qp = QuadraticProgram::new(g, c).with_inequalities(a_in, b_in).with_equalities(a_eq, b_eq);
    Ok(RobustQp { qp, ..layout })
}

pub fn build_robust_qp<T: Scalar>(
    problem: &RobustControlProblem<T>,
    plants: &[PvPlantConfig],
    opts: &ControlOptions,
) -> Result<RobustQp<T>, ControlError> {
    build_qp(problem, plants, opts, true)
}

pub fn build_nominal_qp<T: Scalar>(
    problem: &RobustControlProblem<T>,
    plants: &[PvPlantConfig],
    opts: &ControlOptions,
) -> Result<RobustQp<T>, ControlError> {
    build_qp(problem, plants, opts, false)
}

/// Solves a built QP and maps the solution back to problem units.
pub fn solve_control_qp<T: Scalar>(built: &RobustQp<T>) -> Result<Setpoint<T>, ControlError> {
    let sol = solve_qp_with(&built.qp, QpOptions::default()).map_err(ControlError::Qp)?;
    let m = built.n_plants;
    let n = built.n_nodes;
    let s = built.scale;
    let p: Vec<T> = (0..m).map(|j| (sol.x[built.p(j)] * s).max(T::zero())).collect();
    let q: Vec<T> = (0..m).map(|j| sol.x[built.q(j)] * s).collect();
    let objective = (0..m).map(|j| (p[j] - built.mpp[j]).powi(2) + q[j] * q[j]).sum();
    let (z, g, yp, yq) = if built.robust {
        (
            (0..n).map(|i| sol.x[built.z(i)]).collect(),
            (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| sol.x[built.g(i, j)]).collect(),
            (0..m).map(|j| sol.x[built.yp(j)] * s).collect(),
            (0..m).map(|j| sol.x[built.yq(j)] * s).collect(),
        )
    } else {
        (Vec::new(), Vec::new(), Vec::new(), Vec::new())
    };
    Ok(Setpoint {
        p,
        q,
        status: SolveStatus::Optimal,
        objective,
        z,
        g,
        yp,
        yq,
        kkt: sol.kkt,
        iterations: sol.iterations,
    })
}

/// Builds and solves the robust problem.
pub fn solve_robust<T: Scalar>(
    problem: &RobustControlProblem<T>,
    plants: &[PvPlantConfig],
    opts: &ControlOptions,
) -> Result<Setpoint<T>, ControlError> {
    solve_control_qp(&build_robust_qp(problem, plants, opts)?)
}

impl From<&QpError> for SolveStatus {
    fn from(e: &QpError) -> Self {
        match e {
            QpError::MaxIterations(_) => SolveStatus::MaxIterations,
            _ => SolveStatus::Infeasible,
        }
    }
}
