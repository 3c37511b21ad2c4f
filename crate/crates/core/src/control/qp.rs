//! Dense strictly convex quadratic programming.
//!
//! ```text
//!     minimize     ½ xᵀ G x + cᵀ x
//!     subject to   A_eq x  = b_eq
//!                  A_in x <= b_in
//! ```
//!
//! Solved with the dual active-set method of Goldfarb and Idnani: start from
//! the unconstrained minimum, repeatedly add the most violated constraint and
//! drop active constraints whose multipliers would turn negative. The method
//! needs `G` positive definite and detects infeasibility when a violated
//! constraint cannot be added.

use thiserror::Error;

use crate::linalg::{cholesky, dot, norm2, LinalgError, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("quadratic term is not positive definite: {0}")]
    NotConvex(LinalgError),
    #[error("constraints are infeasible (violated constraint {constraint} cannot be added)")]
    Infeasible { constraint: usize },
    #[error("no convergence after {0} active-set changes")]
    MaxIterations(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram<T> {
    pub g: Matrix<T>,
    pub c: Vec<T>,
    pub a_eq: Matrix<T>,
    pub b_eq: Vec<T>,
    pub a_in: Matrix<T>,
    pub b_in: Vec<T>,
}

impl<T: Scalar> QuadraticProgram<T> {
    pub fn new(g: Matrix<T>, c: Vec<T>) -> Self {
        let n = c.len();
        Self { g, c, a_eq: Matrix::zeros(0, n), b_eq: Vec::new(), a_in: Matrix::zeros(0, n), b_in: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn with_inequalities(mut self, a: Matrix<T>, b: Vec<T>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_equalities(mut self, a: Matrix<T>, b: Vec<T>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn objective(&self, x: &[T]) -> T {
        let gx = self.g.mul_vec(x);
        T::lit(0.5) * dot(x, &gx) + dot(&self.c, x)
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.c.len();
        let bad = |m: String| Err(QpError::Dimension(m));
        if self.g.rows() != n || self.g.cols() != n {
            return bad(format!("G is {}x{}, expected {n}x{n}", self.g.rows(), self.g.cols()));
        }
        if self.a_eq.cols() != n || self.a_eq.rows() != self.b_eq.len() {
            return bad("equality block shape".into());
        }
        if self.a_in.cols() != n || self.a_in.rows() != self.b_in.len() {
            return bad("inequality block shape".into());
        }
        Ok(())
    }

    /// KKT residuals of a candidate primal/dual pair.
    pub fn kkt(&self, x: &[T], lambda_eq: &[T], lambda_in: &[T]) -> KktReport<T> {
        let n = self.c.len();
        let mut grad = self.g.mul_vec(x);
        for i in 0..n {
            grad[i] += self.c[i];
        }
        for (k, &l) in lambda_eq.iter().enumerate() {
            for (gi, &a) in grad.iter_mut().zip(self.a_eq.row(k)) {
                *gi += l * a;
            }
        }
        for (k, &l) in lambda_in.iter().enumerate() {
            for (gi, &a) in grad.iter_mut().zip(self.a_in.row(k)) {
                *gi += l * a;
            }
        }
        let stationarity = grad.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        let mut primal = T::zero();
        for k in 0..self.b_eq.len() {
            primal = primal.max((dot(self.a_eq.row(k), x) - self.b_eq[k]).abs());
        }
        let mut complementarity = T::zero();
        for k in 0..self.b_in.len() {
            let slack = self.b_in[k] - dot(self.a_in.row(k), x);
            primal = primal.max((-slack).max(T::zero()));
            complementarity = complementarity.max((lambda_in[k] * slack).abs());
        }
        let dual = lambda_in.iter().fold(T::zero(), |m, &l| m.max((-l).max(T::zero())));
        KktReport { stationarity, primal_infeasibility: primal, dual_infeasibility: dual, complementarity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport<T> {
    pub stationarity: T,
    pub primal_infeasibility: T,
    pub dual_infeasibility: T,
    pub complementarity: T,
}

impl<T: Scalar> KktReport<T> {
    pub fn max(&self) -> T {
        self.stationarity.max(self.primal_infeasibility).max(self.dual_infeasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    pub lambda_eq: Vec<T>,
    pub lambda_in: Vec<T>,
    pub objective: T,
    pub iterations: usize,
    pub kkt: KktReport<T>,
    /// Indices (into the inequality block) of the constraints active at the solution.
    pub active: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    /// Constraint violation (in units of the normalized constraint row) accepted as feasible.
    pub feasibility_tol: f64,
    pub max_iterations: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { feasibility_tol: 1e-10, max_iterations: None }
    }
}

/// Working constraint: `nᵀx ≥ b` with unit-norm `n`.
struct Row<T> {
    n: Vec<T>,
    b: T,
    /// Original-row scale and sign to map multipliers back.
    scale: T,
    equality: bool,
    index: usize,
}

pub fn solve_qp<T: Scalar>(qp: &QuadraticProgram<T>) -> Result<QpSolution<T>, QpError> {
    solve_qp_with(qp, QpOptions::default())
}

pub fn solve_qp_with<T: Scalar>(qp: &QuadraticProgram<T>, opts: QpOptions) -> Result<QpSolution<T>, QpError> {
    qp.check()?;
    let n = qp.n_vars();
    let m_eq = qp.b_eq.len();
    let m_in = qp.b_in.len();

    let mut rows: Vec<Row<T>> = Vec::with_capacity(m_eq + m_in);
    for k in 0..m_eq {
        let a = qp.a_eq.row(k);
        let s = norm2(a);
        if s == T::zero() {
            if qp.b_eq[k] != T::zero() {
                return Err(QpError::Infeasible { constraint: k });
            }
            continue;
        }
        rows.push(Row { n: a.iter().map(|&v| v / s).collect(), b: qp.b_eq[k] / s, scale: s, equality: true, index: k });
    }
    for k in 0..m_in {
        // a x <= b  ⇔  (−a) x >= −b
        let a = qp.a_in.row(k);
        let s = norm2(a);
        if s == T::zero() {
            if qp.b_in[k] < T::zero() {
                return Err(QpError::Infeasible { constraint: k });
            }
            continue;
        }
        rows.push(Row { n: a.iter().map(|&v| -v / s).collect(), b: -qp.b_in[k] / s, scale: s, equality: false, index: k });
    }

    let l = cholesky(&qp.g).map_err(QpError::NotConvex)?;
    // J = L⁻ᵀ
    let linv = lower_inverse(&l);
    let mut j = linv.transpose();

    // unconstrained minimum x = −G⁻¹c = −L⁻ᵀ L⁻¹ c
    let lc = linv.mul_vec(&qp.c);
    let mut x: Vec<T> = j.mul_vec(&lc).into_iter().map(|v| -v).collect();

    let mut r = Matrix::<T>::zeros(n, n);
    let mut active: Vec<usize> = Vec::new(); // indices into `rows`
    let mut u: Vec<T> = Vec::new();
    let mut flipped = vec![false; rows.len()];

    let tol = T::tol(opts.feasibility_tol, 64.0);
    let dep_tol = T::epsilon() * T::lit(1e3);
    let max_iter = opts.max_iterations.unwrap_or(50 * (n + rows.len()) + 100);
    let mut iterations = 0usize;

    // Equalities first, in order, then inequalities by most violated.
    let mut eq_pending: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].equality).collect();
    eq_pending.reverse();

    loop {
        // choose next constraint
        let p = if let Some(p) = eq_pending.pop() {
            let s = dot(&rows[p].n, &x) - rows[p].b;
            if s > T::zero() {
                rows[p].n.iter_mut().for_each(|v| *v = -*v);
                rows[p].b = -rows[p].b;
                flipped[p] = true;
            }
            p
        } else {
            let mut worst: Option<(usize, T)> = None;
            for (i, row) in rows.iter().enumerate() {
                if row.equality || active.contains(&i) {
                    continue;
                }
                let s = dot(&row.n, &x) - row.b;
                if s < -tol && worst.is_none_or(|(_, w)| s < w) {
                    worst = Some((i, s));
                }
            }
            match worst {
                Some((i, _)) => i,
                None => break,
            }
        };

        let np = rows[p].n.clone();
        let mut u_new = T::zero();
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::MaxIterations(max_iter));
            }
            let q = active.len();
            let d = j.tr_mul_vec(&np);
            // primal direction z = J₂ d₂
            let mut z = vec![T::zero(); n];
            for k in q..n {
                let dk = d[k];
                if dk != T::zero() {
                    for i in 0..n {
                        z[i] += j[(i, k)] * dk;
                    }
                }
            }
            // dual direction r = R⁻¹ d₁
            let mut rv = vec![T::zero(); q];
            for i in (0..q).rev() {
                let mut s = d[i];
                for k in (i + 1)..q {
                    s -= r[(i, k)] * rv[k];
                }
                rv[i] = s / r[(i, i)];
            }

            // partial step length (only inequalities may be dropped)
            let mut t1: Option<(T, usize)> = None;
            for k in 0..q {
                if rows[active[k]].equality || !(rv[k] > T::zero()) {
                    continue;
                }
                let t = u[k] / rv[k];
                if t1.is_none_or(|(best, _)| t < best) {
                    t1 = Some((t, k));
                }
            }
            // full step length
            let d2n = d[q..].iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
            let dn = norm2(&d);
            let ztn = dot(&z, &np);
            let s_p = dot(&np, &x) - rows[p].b;
            let t2 = if d2n > dep_tol * dn && ztn > T::zero() { Some((-s_p / ztn).max(T::zero())) } else { None };

            let (t, partial) = match (t1, t2) {
                (None, None) => return Err(QpError::Infeasible { constraint: rows[p].index }),
                (Some((a, k)), None) => (a, Some(k)),
                (None, Some(b)) => (b, None),
                (Some((a, k)), Some(b)) => {
                    if a < b {
                        (a, Some(k))
                    } else {
                        (b, None)
                    }
                }
            };

            if t2.is_some() {
                for i in 0..n {
                    x[i] += t * z[i];
                }
            }
            for k in 0..q {
                u[k] -= t * rv[k];
            }
            u_new += t;

            match partial {
                None => {
                    add_constraint(&mut j, &mut r, &d, q);
                    active.push(p);
                    u.push(u_new);
                    break;
                }
                Some(k) => {
                    drop_constraint(&mut j, &mut r, k, q);
                    active.remove(k);
                    u.remove(k);
                }
            }
        }
    }

    let mut lambda_eq = vec![T::zero(); m_eq];
    let mut lambda_in = vec![T::zero(); m_in];
    for (k, &i) in active.iter().enumerate() {
        let row = &rows[i];
        // G x + c = Σ u_i n_i with n_i = −a_i/s (inequalities) or ±a_i/s (equalities)
        if row.equality {
            let sign = if flipped[i] { T::one() } else { -T::one() };
            lambda_eq[row.index] = sign * u[k] / row.scale;
        } else {
            lambda_in[row.index] = u[k] / row.scale;
        }
    }
    let kkt = qp.kkt(&x, &lambda_eq, &lambda_in);
    let objective = qp.objective(&x);
    let mut active_in: Vec<usize> = active.iter().filter(|&&i| !rows[i].equality).map(|&i| rows[i].index).collect();
    active_in.sort_unstable();
    Ok(QpSolution { x, lambda_eq, lambda_in, objective, iterations, kkt, active: active_in })
}

fn lower_inverse<T: Scalar>(l: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in col..i {
                s -= l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = s / l[(i, i)];
        }
    }
    inv
}

/// Givens rotation `(c, s)` with `[c s; −s c]ᵀ·[a; b] = [h; 0]`.
fn givens<T: Scalar>(a: T, b: T) -> (T, T, T) {
    let h = a.hypot(b);
    if h == T::zero() {
        return (T::one(), T::zero(), T::zero());
    }
    (a / h, b / h, h)
}

/// Rotates the trailing part of `d` onto position `q` and appends it as the
/// new column of `R`.
fn add_constraint<T: Scalar>(j: &mut Matrix<T>, r: &mut Matrix<T>, d: &[T], q: usize) {
    let n = j.rows();
    let mut d = d.to_vec();
    for k in ((q + 1)..n).rev() {
        if d[k] == T::zero() {
            continue;
        }
        let (c, s, h) = givens(d[k - 1], d[k]);
        d[k - 1] = h;
        d[k] = T::zero();
        for i in 0..n {
            let a = j[(i, k - 1)];
            let b = j[(i, k)];
            j[(i, k - 1)] = c * a + s * b;
            j[(i, k)] = -s * a + c * b;
        }
    }
    for i in 0..=q {
        r[(i, q)] = d[i];
    }
}

/// Removes active constraint `k` of `q` and restores the triangular `R`.
fn drop_constraint<T: Scalar>(j: &mut Matrix<T>, r: &mut Matrix<T>, k: usize, q: usize) {
    let n = j.rows();
    for col in k..(q - 1) {
        for i in 0..n {
            r[(i, col)] = r[(i, col + 1)];
        }
    }
    for i in 0..n {
        r[(i, q - 1)] = T::zero();
    }
    for i in k..(q - 1) {
        let (c, s, h) = givens(r[(i, i)], r[(i + 1, i)]);
        if s == T::zero() {
            continue;
        }
        r[(i, i)] = h;
        r[(i + 1, i)] = T::zero();
        for col in (i + 1)..(q - 1) {
            let a = r[(i, col)];
            let b = r[(i + 1, col)];
            r[(i, col)] = c * a + s * b;
            r[(i + 1, col)] = -s * a + c * b;
        }
        for row in 0..n {
            let a = j[(row, i)];
            let b = j[(row, i + 1)];
            j[(row, i)] = c * a + s * b;
            j[(row, i + 1)] = -s * a + c * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_qp(target: f64) -> QuadraticProgram<f64> {
        // (x − target)² = x² − 2 target x + const
        QuadraticProgram::new(Matrix::from_rows(&[vec![2.0]]), vec![-2.0 * target])
    }

    #[test]
    fn clipped_scalar() {
        let qp = scalar_qp(1.0).with_inequalities(Matrix::from_rows(&[vec![1.0]]), vec![0.5]);
        let sol = solve_qp(&qp).unwrap();
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(sol.lambda_in[0], 1.0, epsilon = 1e-12);
        assert!(sol.kkt.max() < 1e-12);
        assert_eq!(sol.active, vec![0]);
    }

    #[test]
    fn inactive_constraint_is_ignored() {
        let qp = scalar_qp(0.2).with_inequalities(Matrix::from_rows(&[vec![1.0]]), vec![0.5]);
        let sol = solve_qp(&qp).unwrap();
        assert_relative_eq!(sol.x[0], 0.2, epsilon = 1e-14);
        assert!(sol.active.is_empty());
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // p >= 1 and p <= 0
        let qp = scalar_qp(0.5).with_inequalities(Matrix::from_rows(&[vec![-1.0], vec![1.0]]), vec![-1.0, 0.0]);
        assert!(matches!(solve_qp(&qp), Err(QpError::Infeasible { .. })));
    }

    #[test]
    fn quadprog_reference_problem() {
        // min ½x² + ½y² + x  s.t. x + 2y >= 1  →  (−0.6, 0.8)
        let qp = QuadraticProgram::new(Matrix::identity(2), vec![1.0, 0.0])
            .with_inequalities(Matrix::from_rows(&[vec![-1.0, -2.0]]), vec![-1.0]);
        let sol = solve_qp(&qp).unwrap();
        assert_relative_eq!(sol.x[0], -0.6, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn equality_constraints_hold() {
        // min x² + y² s.t. x + y = 1, x <= 0.2
        let qp = QuadraticProgram::new(Matrix::identity(2).scale(2.0), vec![0.0, 0.0])
            .with_equalities(Matrix::from_rows(&[vec![1.0, 1.0]]), vec![1.0])
            .with_inequalities(Matrix::from_rows(&[vec![1.0, 0.0]]), vec![0.2]);
        let sol = solve_qp(&qp).unwrap();
        assert_relative_eq!(sol.x[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 0.8, epsilon = 1e-12);
        assert!(sol.kkt.max() < 1e-12, "{:?}", sol.kkt);
    }

    #[test]
    fn equality_with_positive_residual_sign() {
        // min (x−3)² s.t. x = 1 (start violates from above)
        let qp = scalar_qp(3.0).with_equalities(Matrix::from_rows(&[vec![1.0]]), vec![1.0]);
        let sol = solve_qp(&qp).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-14);
        assert!(sol.kkt.stationarity < 1e-12);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let qp = QuadraticProgram::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]), vec![0.0, 0.0]);
        assert!(matches!(solve_qp(&qp), Err(QpError::NotConvex(_))));
    }

    #[test]
    fn box_constrained_projection_with_degenerate_rows() {
        // project (2, 2) onto the box [0,1]² with a duplicated bound
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, -1.0]]);
        let qp = QuadraticProgram::new(Matrix::identity(2).scale(2.0), vec![-4.0, -4.0])
            .with_inequalities(a, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        let sol = solve_qp(&qp).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-12);
        assert!(sol.kkt.max() < 1e-10);
    }

    #[test]
    fn single_precision() {
        let qp = QuadraticProgram::new(Matrix::from_rows(&[vec![2.0f32]]), vec![-2.0])
            .with_inequalities(Matrix::from_rows(&[vec![1.0f32]]), vec![0.5]);
        let sol = solve_qp(&qp).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-6);
    }
}
