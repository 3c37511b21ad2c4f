//! Two-stage estimation of voltage sensitivity coefficients.
//!
//! An offline ridge least-squares fit over a bootstrap window initializes a
//! recursive least-squares estimator, which is then advanced one measurement
//! row at a time with either exponential forgetting (RLS-F) or selective,
//! per-eigendirection forgetting (RLS-SF). Each monitored node owns an
//! independent estimator whose unknowns are the stacked coefficient vector
//! `[K^p; K^q]` over a set of regressor buses.
//!
//! Coefficient intervals come from the estimator covariance:
//! `ΔK_j = z(α) · sqrt(σ̂² · P[j][j])`, where `σ̂²` is an exponentially
//! weighted mean of squared a-priori residuals and `z(α)` the two-sided
//! standard normal quantile.

mod window;

pub use window::{RegressionWindow, SlidingWindow};

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::grid::Sensitivities;
use crate::linalg::{dot, LinalgError, Matrix, SymmetricEigen};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("normal equations are singular; raise the regularization or extend the window ({0})")]
    SingularSystem(LinalgError),
    #[error("covariance trace {trace:e} exceeds the cap {cap:e} (estimator windup)")]
    NumericalBlowup { trace: f64, cap: f64 },
    #[error("covariance eigendecomposition failed: {0}")]
    EigenFailure(LinalgError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid regression window: {0}")]
    Window(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Recursive estimator for one monitored node.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState<T> {
    /// Stacked `[K^p; K^q]` estimate.
    pub x_hat: Vec<T>,
    pub p_cov: Matrix<T>,
    /// Information matrix `R`.
    pub r_mat: Matrix<T>,
    /// Scalar forgetting factor used by RLS-F and by the residual variance.
    pub mu: T,
    /// Covariance eigenvalues after the last selective-forgetting step
    /// (eigenvalues of the bootstrap covariance before any such step).
    pub tau: Vec<T>,
    pub residual_var: T,
    pub steps: u64,
}

/// Outcome of one recursive step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo<T> {
    /// A-priori residual `e = γ − h·x̂`.
    pub residual: T,
    pub trace: T,
}

/// Bounds and per-eigendirection forgetting factors for RLS-SF.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveForgetting<T> {
    pub tau_min: T,
    pub tau_max: T,
    /// One forgetting factor per eigendirection (largest eigenvalue first).
    pub eig_mu: Vec<T>,
    /// With `false` the eigenvalues of the measurement-updated covariance are
    /// used unchanged.
    pub update_tau: bool,
}

impl<T: Scalar> SelectiveForgetting<T> {
    pub fn new(tau_min: T, tau_max: T, n: usize) -> Self {
        Self { tau_min, tau_max, eig_mu: vec![T::one(); n], update_tau: true }
    }

    pub fn validate(&self, n: usize) -> Result<(), EstimationError> {
        if !(self.tau_min > T::zero() && self.tau_min < self.tau_max) {
            return Err(EstimationError::Parameter(format!(
                "need 0 < tau_min < tau_max, got [{}, {}]",
                self.tau_min, self.tau_max
            )));
        }
        if self.eig_mu.len() != n {
            return Err(EstimationError::Dimension(format!("{} eigen forgetting factors for {n} parameters", self.eig_mu.len())));
        }
        if self.eig_mu.iter().any(|&m| !(m > T::zero() && m <= T::one())) {
            return Err(EstimationError::Parameter("eigen forgetting factors must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Eigenvalue update: a value above `tau_max` is reset to one, anything
    /// else becomes `tau_min + (1 − tau_min/tau_max)·λ`; the result is clamped
    /// to `[tau_min, tau_max]`.
    pub fn next_tau(&self, lambda: T) -> T {
        let t = if lambda > self.tau_max {
            T::one()
        } else {
            self.tau_min + (T::one() - self.tau_min / self.tau_max) * lambda
        };
        t.max(self.tau_min).min(self.tau_max)
    }
}

/// Ridge least squares over a window: `x̂ = (HᵀH + λI)⁻¹ HᵀΓ`.
///
/// The covariance is `(HᵀH)⁻¹` when `HᵀH` is numerically invertible
/// (reciprocal condition number above `1e-12`) and `(HᵀH + λI)⁻¹` otherwise.
/// The residual variance starts at the window's unbiased residual variance
/// and `mu` is stored for later recursive steps.
pub fn ls_bootstrap<T: Scalar>(
    window: &RegressionWindow<T>,
    lambda_reg: T,
    mu: T,
) -> Result<EstimatorState<T>, EstimationError> {
    if !(lambda_reg >= T::zero()) {
        return Err(EstimationError::Parameter(format!("lambda_reg must be non-negative, got {lambda_reg}")));
    }
    check_mu(mu)?;
    let n = window.n_params();
    let h = window.h();
    let hth = h.gram();
    let mut r_mat = hth.clone();
    for i in 0..n {
        r_mat[(i, i)] += lambda_reg;
    }
    let lu = r_mat.lu().map_err(EstimationError::SingularSystem)?;
    let rhs = h.tr_mul_vec(window.gamma());
    let x_hat = lu.solve(&rhs);

    let eig = hth.symmetric_eigen().map_err(EstimationError::EigenFailure)?;
    let top = eig.values.first().copied().unwrap_or_else(T::zero);
    let well_posed = top > T::zero() && eig.min_value() > top * T::tol(1e-12, 16.0);
    let mut p_cov = if well_posed {
        hth.inverse().map_err(EstimationError::SingularSystem)?
    } else {
        r_mat.inverse().map_err(EstimationError::SingularSystem)?
    };
    p_cov.symmetrize();
    let tau = p_cov.symmetric_eigen().map_err(EstimationError::EigenFailure)?.values;

    let m = window.len();
    let sse: T = (0..m)
        .map(|k| {
            let (g, row) = window.row(k);
            let e = g - dot(row, &x_hat);
            e * e
        })
        .sum();
    let dof = if m > n { m - n } else { m.max(1) };
    let residual_var = sse / T::lit(dof as f64);

    Ok(EstimatorState { x_hat, p_cov, r_mat, mu, tau, residual_var, steps: 0 })
}

fn check_mu<T: Scalar>(mu: T) -> Result<(), EstimationError> {
    if mu > T::zero() && mu <= T::one() {
        Ok(())
    } else {
        Err(EstimationError::Parameter(format!("forgetting factor must lie in (0, 1], got {mu}")))
    }
}

impl<T: Scalar> EstimatorState<T> {
    /// Estimator with a given prior mean and isotropic covariance.
    pub fn with_prior(x_hat: Vec<T>, p_diag: T, mu: T) -> Self {
        let n = x_hat.len();
        let p_cov = Matrix::from_diag(&vec![p_diag; n]);
        let r_mat = Matrix::from_diag(&vec![T::one() / p_diag; n]);
        Self { x_hat, p_cov, r_mat, mu, tau: vec![p_diag; n], residual_var: T::zero(), steps: 0 }
    }

    pub fn n_params(&self) -> usize {
        self.x_hat.len()
    }

    pub fn trace(&self) -> T {
        self.p_cov.trace()
    }

    fn check_row(&self, h: &[T]) -> Result<(), EstimationError> {
        if h.len() != self.x_hat.len() {
            return Err(EstimationError::Dimension(format!("row has {} entries, estimator has {}", h.len(), self.x_hat.len())));
        }
        Ok(())
    }

    fn update_variance(&mut self, e: T) {
        self.residual_var = self.mu * self.residual_var + (T::one() - self.mu) * e * e;
    }

    /// `P hᵀ` and the a-priori residual.
    fn innovation(&self, gamma: T, h: &[T]) -> (Vec<T>, T) {
        let ph = self.p_cov.mul_vec(h);
        let e = gamma - dot(h, &self.x_hat);
        (ph, e)
    }

    /// `P ← P − G (P hᵀ)ᵀ`, then symmetrized.
    fn measurement_update(&mut self, ph: &[T], gain: &[T], e: T) {
        let n = self.x_hat.len();
        for i in 0..n {
            self.x_hat[i] += gain[i] * e;
        }
        for i in 0..n {
            let gi = gain[i];
            if gi == T::zero() {
                continue;
            }
            let row = self.p_cov.row_mut(i);
            for j in 0..n {
                row[j] -= gi * ph[j];
            }
        }
        self.p_cov.symmetrize();
    }

    fn update_information(&mut self, h: &[T], forget: T) {
        let n = h.len();
        self.r_mat.scale_mut(forget);
        for i in 0..n {
            if h[i] == T::zero() {
                continue;
            }
            for j in 0..n {
                self.r_mat[(i, j)] += h[i] * h[j];
            }
        }
    }

    /// RLS with exponential forgetting `mu`:
    /// `G = P hᵀ / (μ + h P hᵀ)`, `x̂ ← x̂ + G e`, `P ← (I − G h) P / μ`.
    ///
    /// `cov_cap` bounds the covariance trace; exceeding it reports windup.
    pub fn rls_f_update(
        &mut self,
        gamma: T,
        h: &[T],
        mu: T,
        cov_cap: Option<T>,
    ) -> Result<StepInfo<T>, EstimationError> {
        self.check_row(h)?;
        check_mu(mu)?;
        let (ph, e) = self.innovation(gamma, h);
        let denom = mu + dot(h, &ph);
        let gain: Vec<T> = ph.iter().map(|&v| v / denom).collect();
        self.measurement_update(&ph, &gain, e);
        self.p_cov.scale_mut(T::one() / mu);
        self.update_information(h, mu);
        self.update_variance(e);
        self.steps += 1;
        let trace = self.trace();
        if let Some(cap) = cov_cap {
            if !(trace <= cap) {
                return Err(EstimationError::NumericalBlowup { trace: trace.to_f64_lossy(), cap: cap.to_f64_lossy() });
            }
        }
        Ok(StepInfo { residual: e, trace })
    }

    /// RLS with selective forgetting: gain `G = P hᵀ / (1 + h P hᵀ)`, the
    /// measurement-updated covariance `(I − G h) P` is eigendecomposed and
    /// rebuilt as `Σ τ_i/μ_i u_i u_iᵀ` with `τ_i` from
    /// [`SelectiveForgetting::next_tau`].
    pub fn rls_sf_update(&mut self, gamma: T, h: &[T], sf: &SelectiveForgetting<T>) -> Result<StepInfo<T>, EstimationError> {
        self.check_row(h)?;
        sf.validate(self.x_hat.len())?;
        let (ph, e) = self.innovation(gamma, h);
        let denom = T::one() + dot(h, &ph);
        let gain: Vec<T> = ph.iter().map(|&v| v / denom).collect();
        self.measurement_update(&ph, &gain, e);

        let eig = SymmetricEigen::new(&self.p_cov, Default::default()).map_err(EstimationError::EigenFailure)?;
        let tau: Vec<T> = if sf.update_tau {
            eig.values.iter().map(|&l| sf.next_tau(l)).collect()
        } else {
            eig.values.clone()
        };
        let weights: Vec<T> = tau.iter().zip(&sf.eig_mu).map(|(&t, &m)| t / m).collect();
        self.p_cov = eig.recompose(&weights);
        self.tau = tau;
        self.update_information(h, T::one());
        self.update_variance(e);
        self.steps += 1;
        Ok(StepInfo { residual: e, trace: self.trace() })
    }

    /// Smallest covariance eigenvalue (PSD check).
    pub fn min_cov_eigenvalue(&self) -> Result<T, EstimationError> {
        Ok(self.p_cov.symmetric_eigen().map_err(EstimationError::EigenFailure)?.min_value())
    }

    /// Interval half-widths for every parameter at confidence `alpha`.
    pub fn half_widths(&self, alpha: f64) -> Vec<T> {
        let z = T::lit(normal_quantile_two_sided(alpha));
        let var = self.residual_var.max(T::zero());
        (0..self.x_hat.len()).map(|j| z * (var * self.p_cov[(j, j)].max(T::zero())).sqrt()).collect()
    }
}

/// `z` with `P(|Z| ≤ z) = alpha` for a standard normal `Z`.
pub fn normal_quantile_two_sided(alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "confidence must lie in (0, 1)");
    Normal::standard().inverse_cdf(0.5 + alpha / 2.0)
}

/// Interval estimate of the coefficients of one node against all `N_b`
/// non-slack buses. Buses outside the estimator's regressor set carry a zero
/// estimate and zero half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityEstimate<T> {
    pub node: usize,
    pub kp_hat: Vec<T>,
    pub kq_hat: Vec<T>,
    pub dkp: Vec<T>,
    pub dkq: Vec<T>,
    pub confidence: f64,
}

impl<T: Scalar> SensitivityEstimate<T> {
    pub fn exact(node: usize, kp: Vec<T>, kq: Vec<T>) -> Self {
        let n = kp.len();
        Self { node, kp_hat: kp, kq_hat: kq, dkp: vec![T::zero(); n], dkq: vec![T::zero(); n], confidence: 1.0 }
    }

    pub fn contains_kp(&self, j: usize, value: T) -> bool {
        (value - self.kp_hat[j]).abs() <= self.dkp[j]
    }
}

/// Builds the interval estimate of `state`, whose parameters are
/// `[K^p; K^q]` over the non-slack positions listed in `columns`.
pub fn interval_from_covariance<T: Scalar>(
    state: &EstimatorState<T>,
    node: usize,
    columns: &[usize],
    n_nodes: usize,
    alpha: f64,
) -> SensitivityEstimate<T> {
    let m = columns.len();
    assert_eq!(state.x_hat.len(), 2 * m, "estimator width must be twice the regressor count");
    let half = state.half_widths(alpha);
    let mut est = SensitivityEstimate {
        node,
        kp_hat: vec![T::zero(); n_nodes],
        kq_hat: vec![T::zero(); n_nodes],
        dkp: vec![T::zero(); n_nodes],
        dkq: vec![T::zero(); n_nodes],
        confidence: alpha,
    };
    for (k, &col) in columns.iter().enumerate() {
        est.kp_hat[col] = state.x_hat[k];
        est.kq_hat[col] = state.x_hat[m + k];
        est.dkp[col] = half[k];
        est.dkq[col] = half[m + k];
    }
    est
}

/// Interval estimates for every non-slack node.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityEstimates<T> {
    pub nodes: Vec<SensitivityEstimate<T>>,
}

impl<T: Scalar> SensitivityEstimates<T> {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    /// Point estimates with zero uncertainty taken from an exact matrix.
    pub fn from_matrix(m: &crate::grid::SensitivityMatrix<T>) -> Self {
        let n = m.n();
        let nodes = (0..n)
            .map(|i| SensitivityEstimate::exact(i, m.kp.row(i).to_vec(), m.kq.row(i).to_vec()))
            .collect();
        Self { nodes }
    }

    /// Same estimates with every half-width set to zero.
    pub fn without_uncertainty(&self) -> Self {
        let mut out = self.clone();
        for e in &mut out.nodes {
            e.dkp.iter_mut().for_each(|d| *d = T::zero());
            e.dkq.iter_mut().for_each(|d| *d = T::zero());
        }
        out
    }
}

impl<T: Scalar> Sensitivities<T> for SensitivityEstimates<T> {
    fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
    fn kp(&self, i: usize, j: usize) -> T {
        self.nodes[i].kp_hat[j]
    }
    fn kq(&self, i: usize, j: usize) -> T {
        self.nodes[i].kq_hat[j]
    }
}

/// Which recursive update a [`NodeEstimator`] applies.
#[derive(Debug, Clone, PartialEq)]
pub enum Forgetting<T> {
    Exponential { mu: T, cov_cap: Option<T> },
    Selective(SelectiveForgetting<T>),
}

/// Estimator of one node's coefficient row over a fixed regressor set.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEstimator<T> {
    pub node: usize,
    /// Non-slack positions of the regressor buses.
    pub columns: Vec<usize>,
    pub state: EstimatorState<T>,
}

impl<T: Scalar> NodeEstimator<T> {
    pub fn bootstrap(
        node: usize,
        columns: Vec<usize>,
        window: &RegressionWindow<T>,
        lambda_reg: T,
        mu: T,
    ) -> Result<Self, EstimationError> {
        if window.n_params() != 2 * columns.len() {
            return Err(EstimationError::Dimension(format!(
                "window has {} columns, expected {}",
                window.n_params(),
                2 * columns.len()
            )));
        }
        Ok(Self { node, columns, state: ls_bootstrap(window, lambda_reg, mu)? })
    }

    pub fn update(&mut self, gamma: T, h: &[T], forgetting: &Forgetting<T>) -> Result<StepInfo<T>, EstimationError> {
        match forgetting {
            Forgetting::Exponential { mu, cov_cap } => self.state.rls_f_update(gamma, h, *mu, *cov_cap),
            Forgetting::Selective(sf) => self.state.rls_sf_update(gamma, h, sf),
        }
    }

    pub fn estimate(&self, n_nodes: usize, alpha: f64) -> SensitivityEstimate<T> {
        interval_from_covariance(&self.state, self.node, &self.columns, n_nodes, alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn window(rows: &[Vec<f64>], gamma: &[f64]) -> RegressionWindow<f64> {
        RegressionWindow::from_rows(gamma.to_vec(), Matrix::from_rows(rows)).unwrap()
    }

    #[test]
    fn orthonormal_design_gives_transpose_solution() {
        // rotation by 30 degrees: orthonormal rows
        let (s, c) = (0.5f64, 3f64.sqrt() / 2.0);
        let h = vec![vec![c, -s], vec![s, c]];
        let g = [0.3, -0.7];
        let st = ls_bootstrap(&window(&h, &g), 0.0, 1.0).unwrap();
        let expected = [c * g[0] + s * g[1], -s * g[0] + c * g[1]];
        for (a, b) in st.x_hat.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_target_with_ridge_is_zero() {
        let h = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.1]];
        let st = ls_bootstrap(&window(&h, &[0.0; 3]), 1e-3, 1.0).unwrap();
        assert!(st.x_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_without_ridge_errors() {
        let h = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let err = ls_bootstrap(&window(&h, &[1.0, 2.0]), 0.0, 1.0).unwrap_err();
        assert!(matches!(err, EstimationError::SingularSystem(_)));
        // ridge makes it solvable and falls back to the regularized inverse
        let st = ls_bootstrap(&window(&h, &[1.0, 2.0]), 1e-6, 1.0).unwrap();
        assert!(st.p_cov.is_finite());
        assert!(st.p_cov.max_abs() > 1e3);
    }

    #[test]
    fn rejects_bad_parameters() {
        let h = vec![vec![1.0]];
        assert!(ls_bootstrap(&window(&h, &[1.0]), -1.0, 1.0).is_err());
        assert!(ls_bootstrap(&window(&h, &[1.0]), 0.0, 0.0).is_err());
        let mut st = ls_bootstrap(&window(&h, &[1.0]), 0.0, 1.0).unwrap();
        assert!(st.rls_f_update(1.0, &[1.0, 2.0], 1.0, None).is_err());
        let sf = SelectiveForgetting { tau_min: 1.0, tau_max: 0.5, eig_mu: vec![1.0], update_tau: true };
        assert!(st.rls_sf_update(1.0, &[1.0], &sf).is_err());
    }

    #[test]
    fn consistent_sample_leaves_estimate_unchanged() {
        let h = vec![vec![1.0, 0.2], vec![0.3, 1.0], vec![0.5, 0.5]];
        let mut st = ls_bootstrap(&window(&h, &[1.0, 2.0, 0.5]), 0.0, 0.98).unwrap();
        let x0 = st.x_hat.clone();
        let row = [0.7, -0.4];
        let gamma = dot(&row, &x0);
        let info = st.rls_f_update(gamma, &row, 0.98, None).unwrap();
        assert_eq!(info.residual, 0.0);
        assert_eq!(st.x_hat, x0);
    }

    #[test]
    fn zero_row_scales_covariance_by_inverse_mu() {
        let h = vec![vec![1.0, 0.2], vec![0.3, 1.0], vec![0.5, 0.5]];
        let mut st = ls_bootstrap(&window(&h, &[1.0, 2.0, 0.5]), 0.0, 0.9).unwrap();
        let (x0, p0) = (st.x_hat.clone(), st.p_cov.clone());
        st.rls_f_update(0.4, &[0.0, 0.0], 0.9, None).unwrap();
        assert_eq!(st.x_hat, x0);
        assert!(st.p_cov.sub(&p0.scale(1.0 / 0.9)).max_abs() < 1e-15);
    }

    #[test]
    fn covariance_cap_reports_windup() {
        let mut st = EstimatorState::with_prior(vec![0.0; 2], 1.0, 0.5);
        let mut hit = false;
        for _ in 0..20 {
            if let Err(EstimationError::NumericalBlowup { .. }) = st.rls_f_update(0.0, &[0.0, 0.0], 0.5, Some(100.0)) {
                hit = true;
                break;
            }
        }
        assert!(hit);
    }

    #[test]
    fn tau_rule_cases() {
        let sf = SelectiveForgetting::new(0.01, 100.0, 1);
        assert_eq!(sf.next_tau(250.0), 1.0);
        assert_relative_eq!(sf.next_tau(50.0), 0.01 + (1.0 - 1e-4) * 50.0);
        assert_eq!(sf.next_tau(100.0), 100.0);
        assert_eq!(sf.next_tau(0.0), 0.01);
    }

    #[test]
    fn eigenvalue_above_bound_is_reset() {
        let mut st = EstimatorState::with_prior(vec![0.0; 3], 1.0, 1.0);
        st.p_cov[(0, 0)] = 500.0;
        let sf = SelectiveForgetting::new(0.01, 100.0, 3);
        st.rls_sf_update(0.0, &[0.0; 3], &sf).unwrap();
        // 500 > tau_max resets to 1; the unit eigenvalues map to tau_min + (1 - 1e-4)
        let mut vals = st.tau.clone();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(vals[2], 0.01 + 0.9999, epsilon = 1e-12);
        assert_relative_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(st.p_cov[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn half_widths_use_normal_quantile() {
        let mut st = EstimatorState::with_prior(vec![0.0; 2], 1.0, 1.0);
        st.residual_var = 1.0;
        let hw = st.half_widths(0.99);
        assert_relative_eq!(hw[0], 2.5758293035489, epsilon = 1e-9);
        st.p_cov = Matrix::zeros(2, 2);
        assert!(st.half_widths(0.99).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interval_scatters_into_node_vectors() {
        let mut st = EstimatorState::with_prior(vec![0.1, 0.2, 0.3, 0.4], 1.0, 1.0);
        st.residual_var = 1e-4;
        let est = interval_from_covariance(&st, 2, &[1, 3], 5, 0.99);
        assert_eq!(est.kp_hat, vec![0.0, 0.1, 0.0, 0.2, 0.0]);
        assert_eq!(est.kq_hat, vec![0.0, 0.3, 0.0, 0.4, 0.0]);
        assert!(est.dkp[1] > 0.0 && est.dkp[0] == 0.0);
        assert!(est.contains_kp(1, 0.1));
    }
}
