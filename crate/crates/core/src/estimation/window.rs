use std::collections::VecDeque;

use super::EstimationError;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Batch of regression rows `γ ≈ h·x` for one monitored node: voltage deltas
/// `gamma` and injection-delta rows `h` (`[Δp Δq]` over the regressor buses).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionWindow<T> {
    gamma: Vec<T>,
    h: Matrix<T>,
    timestamps: Vec<u64>,
}

impl<T: Scalar> RegressionWindow<T> {
    /// Checks shapes and that timestamps advance by exactly `period` seconds.
    pub fn new(gamma: Vec<T>, h: Matrix<T>, timestamps: Vec<u64>, period: u64) -> Result<Self, EstimationError> {
        if gamma.len() != h.rows() || timestamps.len() != h.rows() {
            return Err(EstimationError::Dimension(format!(
                "window has {} targets, {} rows and {} timestamps",
                gamma.len(),
                h.rows(),
                timestamps.len()
            )));
        }
        for w in timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(EstimationError::Window(format!("timestamps not increasing at {}", w[1])));
            }
            if w[1] - w[0] > period {
                return Err(EstimationError::Window(format!("gap of {} s before t={}", w[1] - w[0], w[1])));
            }
        }
        Ok(Self { gamma, h, timestamps })
    }

    /// Window without timing information (rows numbered 0..M).
    pub fn from_rows(gamma: Vec<T>, h: Matrix<T>) -> Result<Self, EstimationError> {
        let ts = (0..gamma.len() as u64).collect();
        Self::new(gamma, h, ts, 1)
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.h.cols()
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn h(&self) -> &Matrix<T> {
        &self.h
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn row(&self, k: usize) -> (T, &[T]) {
        (self.gamma[k], self.h.row(k))
    }

    /// Fewer rows than unknowns: the LS problem is only determined through
    /// regularization.
    pub fn is_underdetermined(&self) -> bool {
        self.len() < self.n_params()
    }
}

/// Fixed-capacity buffer of the most recent regression rows.
#[derive(Debug, Clone)]
pub struct SlidingWindow<T> {
    capacity: usize,
    n_params: usize,
    rows: VecDeque<(u64, T, Vec<T>)>,
}

impl<T: Scalar> SlidingWindow<T> {
    pub fn new(capacity: usize, n_params: usize) -> Self {
        Self { capacity, n_params, rows: VecDeque::with_capacity(capacity + 1) }
    }

    pub fn push(&mut self, timestamp: u64, gamma: T, h: Vec<T>) {
        assert_eq!(h.len(), self.n_params, "row width differs from window width");
        self.rows.push_back((timestamp, gamma, h));
        while self.rows.len() > self.capacity {
            self.rows.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    pub fn to_window(&self, period: u64) -> Result<RegressionWindow<T>, EstimationError> {
        let m = self.rows.len();
        let mut h = Matrix::zeros(m, self.n_params);
        let mut gamma = Vec::with_capacity(m);
        let mut ts = Vec::with_capacity(m);
        for (k, (t, g, row)) in self.rows.iter().enumerate() {
            h.row_mut(k).copy_from_slice(row);
            gamma.push(*g);
            ts.push(*t);
        }
        RegressionWindow::new(gamma, h, ts, period)
    }

    /// The last `n` rows, oldest first.
    pub fn tail(&self, n: usize) -> impl Iterator<Item = (u64, T, &[T])> {
        let skip = self.rows.len().saturating_sub(n);
        self.rows.iter().skip(skip).map(|(t, g, h)| (*t, *g, h.as_slice()))
    }
}
