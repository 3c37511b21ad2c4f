//! Model-less voltage control for distribution feeders: online estimation of
//! voltage sensitivity coefficients with uncertainty intervals, and a robust
//! QP that dispatches PV plants against those intervals.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`). The aliases at
//! the crate root fix the scalar for the common case.

pub mod control;
pub mod estimation;
pub mod forecast;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod scalar;

pub use scalar::Scalar;

pub type MatrixF64 = linalg::Matrix<f64>;
pub type MatrixF32 = linalg::Matrix<f32>;
pub type GridStateF64 = grid::GridState<f64>;
pub type GridStateF32 = grid::GridState<f32>;
pub type PowerFlowF64 = grid::PowerFlow<f64>;
pub type SensitivityMatrixF64 = grid::SensitivityMatrix<f64>;
pub type EstimatorStateF64 = estimation::EstimatorState<f64>;
pub type EstimatorStateF32 = estimation::EstimatorState<f32>;
pub type NodeEstimatorF64 = estimation::NodeEstimator<f64>;
pub type SensitivityEstimatesF64 = estimation::SensitivityEstimates<f64>;
pub type RobustControlProblemF64 = control::RobustControlProblem<f64>;
pub type SetpointF64 = control::Setpoint<f64>;
pub type IntervalSeriesF64 = metrics::IntervalSeries<f64>;
