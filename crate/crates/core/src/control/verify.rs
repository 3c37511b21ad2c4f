//! Independent audit of a setpoint: enumerate every vertex of the
//! coefficient box over the controllable columns and evaluate the linear
//! voltage model at each.

use super::robust::{PvPlantConfig, RobustControlProblem, Setpoint};
use super::ControlError;
use crate::scalar::Scalar;

/// Largest number of interval coefficients per node that is enumerated.
pub const MAX_VERTEX_COEFFICIENTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport<T> {
    pub nominal: Vec<T>,
    pub worst_max: Vec<T>,
    pub worst_min: Vec<T>,
    pub vertices_per_node: usize,
}

impl<T: Scalar> RobustnessReport<T> {
    /// Largest excursion above `v_max` over all nodes (zero or negative if none).
    pub fn max_upper_violation(&self, v_max: T) -> T {
        self.worst_max.iter().map(|&v| v - v_max).fold(T::neg_infinity(), T::max)
    }

    pub fn max_lower_violation(&self, v_min: T) -> T {
        self.worst_min.iter().map(|&v| v_min - v).fold(T::neg_infinity(), T::max)
    }
}

pub fn verify_robustness<T: Scalar>(
    setpoint: &Setpoint<T>,
    problem: &RobustControlProblem<T>,
    plants: &[PvPlantConfig],
) -> Result<RobustnessReport<T>, ControlError> {
    let n = problem.v_prev.len();
    let m = plants.len();
    let coeffs = 2 * m;
    if coeffs > MAX_VERTEX_COEFFICIENTS {
        return Err(ControlError::TooManyVertices(coeffs));
    }
    if problem.estimates.n() < n {
        return Err(ControlError::MissingEstimate(problem.estimates.n()));
    }
    if setpoint.p.len() != m || setpoint.q.len() != m {
        return Err(ControlError::InconsistentDimensions("setpoint does not cover every plant".into()));
    }
    let deltas: Vec<T> = (0..m)
        .map(|j| setpoint.p[j] - problem.p_meas[j])
        .chain((0..m).map(|j| setpoint.q[j] - problem.q_meas[j]))
        .collect();
    let vertices = 1usize << coeffs;
    let mut report = RobustnessReport {
        nominal: Vec::with_capacity(n),
        worst_max: Vec::with_capacity(n),
        worst_min: Vec::with_capacity(n),
        vertices_per_node: vertices,
    };
    for i in 0..n {
        let e = &problem.estimates.nodes[i];
        let hat: Vec<T> = plants.iter().map(|p| e.kp_hat[p.node]).chain(plants.iter().map(|p| e.kq_hat[p.node])).collect();
        let half: Vec<T> = plants.iter().map(|p| e.dkp[p.node]).chain(plants.iter().map(|p| e.dkq[p.node])).collect();
        let eval = |signs: Option<usize>| {
            let mut v = problem.v_prev[i];
            for k in 0..coeffs {
                let k_val = match signs {
                    None => hat[k],
                    Some(s) if s >> k & 1 == 1 => hat[k] + half[k],
                    Some(_) => hat[k] - half[k],
                };
                v += k_val * deltas[k];
            }
            v
        };
        let mut hi = T::neg_infinity();
        let mut lo = T::infinity();
        for s in 0..vertices {
            let v = eval(Some(s));
            hi = hi.max(v);
            lo = lo.min(v);
        }
        report.nominal.push(eval(None));
        report.worst_max.push(hi);
        report.worst_min.push(lo);
    }
    Ok(report)
}
