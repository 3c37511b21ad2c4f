//! Voltage-magnitude sensitivity coefficients: the finite-difference oracle
//! and the first-order voltage model built on them.

use super::model::NetworkModel;
use super::powerflow::{GridState, Injections, PowerFlow, PowerFlowError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// `kp[(i, j)] = ∂|v_i|/∂p_j`, `kq[(i, j)] = ∂|v_i|/∂q_j`, both in pu/pu over
/// the non-slack buses.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix<T> {
    pub kp: Matrix<T>,
    pub kq: Matrix<T>,
    /// Seconds since midnight of the state the matrix was evaluated at, if known.
    pub computed_at: Option<u64>,
}

impl<T: Scalar> SensitivityMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { kp: Matrix::zeros(n, n), kq: Matrix::zeros(n, n), computed_at: None }
    }

    pub fn n(&self) -> usize {
        self.kp.rows()
    }
}

/// Anything that provides nominal coefficients row by row.
pub trait Sensitivities<T: Scalar> {
    fn n_nodes(&self) -> usize;
    fn kp(&self, i: usize, j: usize) -> T;
    fn kq(&self, i: usize, j: usize) -> T;
}

impl<T: Scalar> Sensitivities<T> for SensitivityMatrix<T> {
    fn n_nodes(&self) -> usize {
        self.kp.rows()
    }
    fn kp(&self, i: usize, j: usize) -> T {
        self.kp[(i, j)]
    }
    fn kq(&self, i: usize, j: usize) -> T {
        self.kq[(i, j)]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    /// Central-difference step in pu.
    pub step: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { step: 1e-4 }
    }
}

/// Central finite differences of the AC power flow around `state`.
///
/// Each column costs two perturbed solves (warm-started from `state`).
/// Truncation error is `O(h²)`: the third derivative of |v| is bounded on an
/// LV feeder, so halving `h` shrinks it four-fold until the solver tolerance
/// (`1e-10 / h`) dominates.
pub fn oracle_sensitivities<T: Scalar>(
    model: &NetworkModel,
    state: &GridState<T>,
) -> Result<SensitivityMatrix<T>, PowerFlowError> {
    let pf = PowerFlow::new(model);
    let all: Vec<usize> = (0..pf.n_non_slack()).collect();
    oracle_columns(&pf, state, OracleOptions::default(), &all)
}

/// Oracle restricted to the given non-slack columns; other columns stay zero.
pub fn oracle_columns<T: Scalar>(
    pf: &PowerFlow<T>,
    state: &GridState<T>,
    opts: OracleOptions,
    columns: &[usize],
) -> Result<SensitivityMatrix<T>, PowerFlowError> {
    let n = pf.n_non_slack();
    let slack = pf.slack_bus();
    let base = injections_of(state, slack);
    let h = T::lit(opts.step);
    let two_h = h + h;
    let mut out = SensitivityMatrix::zeros(n);
    for &j in columns {
        assert!(j < n, "column {j} out of range");
        for reactive in [false, true] {
            let mut plus = base.clone();
            let mut minus = base.clone();
            if reactive {
                plus.q[j] += h;
                minus.q[j] -= h;
            } else {
                plus.p[j] += h;
                minus.p[j] -= h;
            }
            let vp = pf.solve_from(&plus, state.slack_v, state)?.non_slack_v(slack);
            let vm = pf.solve_from(&minus, state.slack_v, state)?.non_slack_v(slack);
            let target = if reactive { &mut out.kq } else { &mut out.kp };
            for i in 0..n {
                target[(i, j)] = (vp[i] - vm[i]) / two_h;
            }
        }
    }
    Ok(out)
}

/// Non-slack injections of a converged state.
pub fn injections_of<T: Scalar>(state: &GridState<T>, slack: usize) -> Injections<T> {
    let pick = |v: &[T]| v.iter().enumerate().filter(|&(b, _)| b != slack).map(|(_, &x)| x).collect();
    Injections { p: pick(&state.p_inj), q: pick(&state.q_inj) }
}

/// First-order voltage model: `|v_i| = |v_i,prev| + Δp·K^p_i + Δq·K^q_i`.
pub fn linearized_voltage<T: Scalar, S: Sensitivities<T> + ?Sized>(
    prev_v: &[T],
    sens: &S,
    dp: &[T],
    dq: &[T],
) -> Vec<T> {
    let n = sens.n_nodes();
    assert_eq!(prev_v.len(), n, "previous voltages must cover every non-slack bus");
    assert_eq!(dp.len(), n);
    assert_eq!(dq.len(), n);
    (0..n)
        .map(|i| {
            let mut v = prev_v[i];
            for j in 0..n {
                if dp[j] != T::zero() {
                    v += dp[j] * sens.kp(i, j);
                }
                if dq[j] != T::zero() {
                    v += dq[j] * sens.kq(i, j);
                }
            }
            v
        })
        .collect()
}
