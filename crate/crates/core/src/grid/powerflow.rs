//! Newton-Raphson AC power flow in polar coordinates.

use thiserror::Error;

use super::model::NetworkModel;
use crate::linalg::{norm_inf, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:e} pu)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("injection vector has length {got}, network has {expected} non-slack buses")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite injection at non-slack position {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-10 }
    }
}

/// Net nodal injections at the non-slack buses, per unit, generation positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections<T> {
    pub p: Vec<T>,
    pub q: Vec<T>,
}

impl<T: Scalar> Injections<T> {
    pub fn zeros(n: usize) -> Self {
        Self { p: vec![T::zero(); n], q: vec![T::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Converged operating point. Vectors indexed by bus (slack included).
#[derive(Debug, Clone, PartialEq)]
pub struct GridState<T> {
    pub v_mag: Vec<T>,
    pub v_ang: Vec<T>,
    pub p_inj: Vec<T>,
    pub q_inj: Vec<T>,
    pub slack_v: T,
    pub iterations: usize,
    pub mismatch: T,
}

impl<T: Scalar> GridState<T> {
    /// Voltage magnitudes of the non-slack buses in estimator order.
    pub fn non_slack_v(&self, slack: usize) -> Vec<T> {
        self.v_mag.iter().enumerate().filter(|&(b, _)| b != slack).map(|(_, &v)| v).collect()
    }
}

/// Power-flow engine with the admittance matrix of one network cached.
#[derive(Debug, Clone)]
pub struct PowerFlow<T> {
    g: Matrix<T>,
    b: Matrix<T>,
    slack: usize,
    /// Bus index of each non-slack unknown.
    buses: Vec<usize>,
    opts: PowerFlowOptions,
}

impl<T: Scalar> PowerFlow<T> {
    pub fn new(model: &NetworkModel) -> Self {
        Self::with_options(model, PowerFlowOptions::default())
    }

    pub fn with_options(model: &NetworkModel, opts: PowerFlowOptions) -> Self {
        let (g, b) = model.admittance::<T>();
        Self { g, b, slack: model.slack_bus(), buses: model.non_slack_buses(), opts }
    }

    pub fn n_non_slack(&self) -> usize {
        self.buses.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.slack
    }

    pub fn options(&self) -> PowerFlowOptions {
        self.opts
    }

    /// Solves from a flat start.
    pub fn solve(&self, inj: &Injections<T>, slack_v: T) -> Result<GridState<T>, PowerFlowError> {
        let n = self.g.rows();
        let mut v = vec![T::one(); n];
        v[self.slack] = slack_v;
        self.iterate(inj, slack_v, v, vec![T::zero(); n])
    }

    /// Solves starting from a previously converged state.
    pub fn solve_from(
        &self,
        inj: &Injections<T>,
        slack_v: T,
        start: &GridState<T>,
    ) -> Result<GridState<T>, PowerFlowError> {
        let mut v = start.v_mag.clone();
        v[self.slack] = slack_v;
        let mut a = start.v_ang.clone();
        a[self.slack] = T::zero();
        self.iterate(inj, slack_v, v, a)
    }

    /// Complex power injected at every bus for the given voltages.
    fn bus_powers(&self, v: &[T], a: &[T]) -> (Vec<T>, Vec<T>) {
        let n = v.len();
        let mut p = vec![T::zero(); n];
        let mut q = vec![T::zero(); n];
        for i in 0..n {
            let (mut pi, mut qi) = (T::zero(), T::zero());
            for k in 0..n {
                let gik = self.g[(i, k)];
                let bik = self.b[(i, k)];
                if gik == T::zero() && bik == T::zero() {
                    continue;
                }
                let (s, c) = (a[i] - a[k]).sin_cos();
                pi += v[k] * (gik * c + bik * s);
                qi += v[k] * (gik * s - bik * c);
            }
            p[i] = v[i] * pi;
            q[i] = v[i] * qi;
        }
        (p, q)
    }

    fn mismatch(&self, inj: &Injections<T>, p: &[T], q: &[T]) -> Vec<T> {
        let m = self.buses.len();
        let mut f = vec![T::zero(); 2 * m];
        for (k, &bus) in self.buses.iter().enumerate() {
            f[k] = p[bus] - inj.p[k];
            f[m + k] = q[bus] - inj.q[k];
        }
        f
    }

    fn jacobian(&self, v: &[T], a: &[T], p: &[T], q: &[T]) -> Matrix<T> {
        let m = self.buses.len();
        let mut jac = Matrix::zeros(2 * m, 2 * m);
        for (r, &i) in self.buses.iter().enumerate() {
            for (c, &k) in self.buses.iter().enumerate() {
                let gik = self.g[(i, k)];
                let bik = self.b[(i, k)];
                if i == k {
                    let vi = v[i];
                    jac[(r, c)] = -q[i] - bik * vi * vi;
                    jac[(r, m + c)] = p[i] / vi + gik * vi;
                    jac[(m + r, c)] = p[i] - gik * vi * vi;
                    jac[(m + r, m + c)] = q[i] / vi - bik * vi;
                } else {
                    if gik == T::zero() && bik == T::zero() {
                        continue;
                    }
                    let (s, co) = (a[i] - a[k]).sin_cos();
                    let t1 = gik * s - bik * co;
                    let t2 = gik * co + bik * s;
                    jac[(r, c)] = v[i] * v[k] * t1;
                    jac[(r, m + c)] = v[i] * t2;
                    jac[(m + r, c)] = -v[i] * v[k] * t2;
                    jac[(m + r, m + c)] = v[i] * t1;
                }
            }
        }
        jac
    }

    fn iterate(
        &self,
        inj: &Injections<T>,
        slack_v: T,
        mut v: Vec<T>,
        mut a: Vec<T>,
    ) -> Result<GridState<T>, PowerFlowError> {
        let m = self.buses.len();
        if inj.p.len() != m || inj.q.len() != m {
            return Err(PowerFlowError::Dimension { expected: m, got: inj.p.len().min(inj.q.len()) });
        }
        if let Some(k) = (0..m).find(|&k| !inj.p[k].is_finite() || !inj.q[k].is_finite()) {
            return Err(PowerFlowError::NonFinite(k));
        }
        let tol = T::tol(self.opts.tolerance, 64.0);
        let mut iteration = 0;
        loop {
            let (p, q) = self.bus_powers(&v, &a);
            let f = self.mismatch(inj, &p, &q);
            let err = norm_inf(&f);
            if !err.is_finite() {
                return Err(PowerFlowError::NonConvergence { iterations: iteration, mismatch: f64::INFINITY });
            }
            if err < tol {
                return Ok(GridState {
                    v_mag: v,
                    v_ang: a,
                    p_inj: p,
                    q_inj: q,
                    slack_v,
                    iterations: iteration,
                    mismatch: err,
                });
            }
            if iteration == self.opts.max_iterations {
                return Err(PowerFlowError::NonConvergence { iterations: iteration, mismatch: err.to_f64_lossy() });
            }
            let jac = self.jacobian(&v, &a, &p, &q);
            let lu = jac.lu().map_err(|_| PowerFlowError::SingularJacobian { iteration })?;
            let dx = lu.solve(&f);
            for (k, &bus) in self.buses.iter().enumerate() {
                a[bus] -= dx[k];
                v[bus] -= dx[m + k];
            }
            if v.iter().any(|&x| !(x > T::zero())) {
                return Err(PowerFlowError::NonConvergence { iterations: iteration + 1, mismatch: err.to_f64_lossy() });
            }
            iteration += 1;
        }
    }
}

/// One-shot flat-start solve; builds the admittance matrix on every call.
pub fn solve_power_flow<T: Scalar>(
    model: &NetworkModel,
    inj: &Injections<T>,
    slack_v: T,
) -> Result<GridState<T>, PowerFlowError> {
    PowerFlow::new(model).solve(inj, slack_v)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// |V2| for a two-bus feeder from the bi-quadratic voltage equation
    /// `V⁴ + (2(rP_L + xQ_L) − V1²)V² + (r² + x²)(P_L² + Q_L²) = 0`, with the
    /// load `P_L = −p`, `Q_L = −q`.
    fn two_bus_closed_form(v1: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
        let (pl, ql) = (-p, -q);
        let b = 2.0 * (r * pl + x * ql) - v1 * v1;
        let c = (r * r + x * x) * (pl * pl + ql * ql);
        ((-b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
    }

    #[test]
    fn flat_case_stays_flat() {
        let model = NetworkModel::two_bus(0.01, 0.01);
        let st = solve_power_flow(&model, &Injections::<f64>::zeros(1), 1.0).unwrap();
        assert!(st.v_mag.iter().all(|&v| v == 1.0));
        assert!(st.v_ang.iter().all(|&a| a == 0.0));
        assert_eq!(st.iterations, 0);
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let model = NetworkModel::two_bus(0.01, 0.01);
        let inj = Injections { p: vec![-0.1], q: vec![0.0] };
        let st = solve_power_flow(&model, &inj, 1.0).unwrap();
        let expected = two_bus_closed_form(1.0, 0.01, 0.01, -0.1, 0.0);
        assert!((st.v_mag[1] - expected).abs() < 1e-9, "{} vs {}", st.v_mag[1], expected);
        assert!(st.mismatch < 1e-10);
    }

    #[test]
    fn two_bus_with_generation_and_reactive() {
        let model = NetworkModel::two_bus(0.02, 0.05);
        let inj = Injections { p: vec![0.3], q: vec![-0.1] };
        let st = solve_power_flow(&model, &inj, 1.02).unwrap();
        let expected = two_bus_closed_form(1.02, 0.02, 0.05, 0.3, -0.1);
        assert!((st.v_mag[1] - expected).abs() < 1e-9);
    }

    #[test]
    fn per_unit_scaling_invariance() {
        let model = NetworkModel::two_bus(0.03, 0.01);
        let inj = Injections { p: vec![-0.2], q: vec![-0.05] };
        let a = solve_power_flow(&model, &inj, 1.0).unwrap();
        let doubled = model.with_s_base(2.0 * model.s_base_va);
        let inj2 = Injections { p: vec![-0.1], q: vec![-0.025] };
        let b = solve_power_flow(&doubled, &inj2, 1.0).unwrap();
        let (va, vb) = (a.v_mag[1] * model.v_base_v, b.v_mag[1] * doubled.v_base_v);
        assert!((va - vb).abs() < 1e-9, "{va} vs {vb}");
    }

    #[test]
    fn deterministic_and_warm_start_agree() {
        let model = NetworkModel::two_bus(0.05, 0.02);
        let pf: PowerFlow<f64> = PowerFlow::new(&model);
        let inj = Injections { p: vec![0.4], q: vec![0.1] };
        let a = pf.solve(&inj, 1.0).unwrap();
        let b = pf.solve(&inj, 1.0).unwrap();
        assert_eq!(a, b);
        let inj2 = Injections { p: vec![0.41], q: vec![0.1] };
        let warm = pf.solve_from(&inj2, 1.0, &a).unwrap();
        let cold = pf.solve(&inj2, 1.0).unwrap();
        assert!((warm.v_mag[1] - cold.v_mag[1]).abs() < 1e-12);
    }

    #[test]
    fn infeasible_load_does_not_converge() {
        let model = NetworkModel::two_bus(0.5, 0.5);
        let inj = Injections { p: vec![-5.0], q: vec![-5.0] };
        let err = solve_power_flow(&model, &inj, 1.0).unwrap_err();
        assert!(matches!(err, PowerFlowError::NonConvergence { .. } | PowerFlowError::SingularJacobian { .. }));
    }

    #[test]
    fn rejects_bad_injections() {
        let model = NetworkModel::two_bus(0.01, 0.01);
        let err = solve_power_flow(&model, &Injections::<f64>::zeros(2), 1.0).unwrap_err();
        assert!(matches!(err, PowerFlowError::Dimension { .. }));
        let inj = Injections { p: vec![f64::NAN], q: vec![0.0] };
        assert_eq!(solve_power_flow(&model, &inj, 1.0).unwrap_err(), PowerFlowError::NonFinite(0));
    }

    #[test]
    fn single_precision_solve() {
        let model = NetworkModel::two_bus(0.01, 0.01);
        let inj = Injections { p: vec![-0.1f32], q: vec![0.0] };
        let st = solve_power_flow(&model, &inj, 1.0).unwrap();
        let expected = two_bus_closed_form(1.0, 0.01, 0.01, -0.1, 0.0) as f32;
        assert!((st.v_mag[1] - expected).abs() < 1e-5);
    }
}
