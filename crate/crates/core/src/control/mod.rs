//! Robust voltage control: the dense QP solver, the robust problem built on
//! top of it, and a vertex-enumeration audit.

mod qp;
mod robust;
mod verify;

use thiserror::Error;

pub use qp::{solve_qp, solve_qp_with, KktReport, QpError, QpOptions, QpSolution, QuadraticProgram};
pub use robust::{
    build_nominal_qp, build_qp, build_robust_qp, solve_control_qp, solve_robust, ControlOptions, ProtectionCoupling,
    PvPlantConfig, RobustControlProblem, RobustQp, Setpoint, SolveStatus,
};
pub use verify::{verify_robustness, RobustnessReport, MAX_VERTEX_COEFFICIENTS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("estimates cover only {0} nodes")]
    MissingEstimate(usize),
    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),
    #[error(transparent)]
    Qp(QpError),
    #[error("{0} interval coefficients per node is too many to enumerate")]
    TooManyVertices(usize),
}
