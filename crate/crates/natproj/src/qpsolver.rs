//! Dense convex quadratic programming:
//!
//! ```text
//!     minimize    1/2 x' P x + q' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//! ```
//!
//! Solved with the Goldfarb-Idnani dual active-set method: start at the
//! unconstrained minimum, repeatedly add the most violated constraint to the
//! active set while keeping dual feasibility, taking partial steps that drop
//! blocking constraints. For strictly convex P the method terminates at the
//! exact KKT point and certifies infeasibility when the dual step becomes
//! unbounded. Equality constraints are added first and never dropped.
//!
//! This is the continuous subproblem solved at every branch-and-bound node
//! of the mixed-integer projector.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("P is not positive semidefinite (Cholesky failed even with 1e-10 shift)")]
    NotPsd,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

/// A convex QP with symmetric PSD cost matrix.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = p.nrows();
        if p.ncols() != n {
            return Err(QpError::DimensionMismatch("P must be square".into()));
        }
        if q.len() != n {
            return Err(QpError::DimensionMismatch(format!(
                "q has length {}, expected {}",
                q.len(),
                n
            )));
        }
        for (name, m, b) in [("A_eq", &a_eq, &b_eq), ("A_in", &a_in, &b_in)] {
            if m.nrows() != b.len() {
                return Err(QpError::DimensionMismatch(format!(
                    "{name} has {} rows but rhs has {}",
                    m.nrows(),
                    b.len()
                )));
            }
            if m.nrows() > 0 && m.ncols() != n {
                return Err(QpError::DimensionMismatch(format!(
                    "{name} has {} columns, expected {}",
                    m.ncols(),
                    n
                )));
            }
        }
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-10 {
            return Err(QpError::DimensionMismatch(format!(
                "P is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        Ok(Self {
            p,
            q,
            a_eq,
            b_eq,
            a_in,
            b_in,
        })
    }

    /// Inequality-only convenience constructor.
    pub fn inequality(p: DMatrix<f64>, q: DVector<f64>, a_in: DMatrix<f64>, b_in: DVector<f64>) -> Result<Self, QpError> {
        let n = p.nrows();
        Self::new(p, q, DMatrix::zeros(0, n), DVector::zeros(0), a_in, b_in)
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.p * x)[(0, 0)] + self.q.dot(x)
    }

    /// Max KKT violation at (x, duals): primal feasibility, stationarity,
    /// complementary slackness, and dual sign.
    pub fn kkt_residual(&self, x: &DVector<f64>, y_eq: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let mut res: f64 = 0.0;
        let mut grad = &self.p * x + &self.q;
        if self.a_eq.nrows() > 0 {
            let r_eq = &self.a_eq * x - &self.b_eq;
            res = res.max(r_eq.amax());
            grad += self.a_eq.transpose() * y_eq;
        }
        if self.a_in.nrows() > 0 {
            let slack = &self.b_in - &self.a_in * x;
            for i in 0..slack.len() {
                res = res.max(-slack[i]); // primal violation
                res = res.max(-lambda[i]); // dual sign
                res = res.max((lambda[i] * slack[i]).abs()); // complementarity
            }
            grad += self.a_in.transpose() * lambda;
        }
        res.max(grad.amax())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Multipliers for the inequality rows (zero when inactive).
    pub lambda: DVector<f64>,
    /// Multipliers for the equality rows.
    pub y_eq: DVector<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ConstraintKind {
    Equality(usize),
    Inequality(usize),
}

/// Solve a convex QP to KKT tolerance `tol` (default contract 1e-8).
pub fn solve_qp(qp: &QuadraticProgram, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    let n = qp.dim();
    let chol = match nalgebra::Cholesky::new(qp.p.clone()) {
        Some(c) => c,
        None => {
            let shifted = &qp.p + DMatrix::identity(n, n) * 1e-10;
            nalgebra::Cholesky::new(shifted).ok_or(QpError::NotPsd)?
        }
    };

    // Unconstrained minimum and the inverse transposed Cholesky factor.
    let mut x = -chol.solve(&qp.q);
    let lt = chol.l().transpose();
    let mut j = lt
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotPsd)?;

    let m_eq = qp.a_eq.nrows();
    let m_in = qp.a_in.nrows();

    // Active set bookkeeping: R is the triangular factor of the active
    // normals in the J basis, u the active duals.
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut active: Vec<ConstraintKind> = Vec::new();
    let mut u: Vec<f64> = Vec::new();

    let mut iterations = 0usize;
    let mut next_eq = 0usize;
    let mut status = QpStatus::Optimal;
    let mut infeas_measure = 0.0f64;

    'outer: loop {
        iterations += 1;
        if iterations > max_iter {
            status = QpStatus::IterLimit;
            break;
        }

        // Pick the next constraint: pending equalities first, then the most
        // violated inequality. Normals are oriented so the chosen constraint
        // reads n_plus . x >= b_plus with negative slack.
        let (kind, n_plus, b_plus, mut s) = if next_eq < m_eq {
            let i = next_eq;
            next_eq += 1;
            let row = qp.a_eq.row(i).transpose();
            let sv = row.dot(&x) - qp.b_eq[i];
            if sv > 0.0 {
                (ConstraintKind::Equality(i), -row, -qp.b_eq[i], -sv)
            } else {
                (ConstraintKind::Equality(i), row, qp.b_eq[i], sv)
            }
        } else {
            if m_in == 0 {
                break;
            }
            let slack = &qp.b_in - &qp.a_in * &x;
            let mut worst = usize::MAX;
            let mut worst_s = -tol;
            for i in 0..m_in {
                if slack[i] < worst_s
                    && !active.contains(&ConstraintKind::Inequality(i))
                {
                    worst_s = slack[i];
                    worst = i;
                }
            }
            if worst == usize::MAX {
                break; // primal feasible: done
            }
            // In >= form: -a_i . x >= -b_i, slack = b_i - a_i . x.
            (
                ConstraintKind::Inequality(worst),
                -qp.a_in.row(worst).transpose(),
                -qp.b_in[worst],
                worst_s,
            )
        };

        if matches!(kind, ConstraintKind::Equality(_)) && s >= -1e-14 && s <= 1e-14 {
            // Already satisfied; still add it so later steps preserve it,
            // unless it is linearly dependent on the current active set.
            let d = j.transpose() * &n_plus;
            let q_act = active.len();
            let dep = d.rows(q_act, n - q_act).amax() <= 1e-11 * (1.0 + d.amax());
            if dep {
                continue; // redundant consistent equality
            }
        }

        let mut u_plus = 0.0f64;
        // Inner loop: take primal/dual steps until this constraint is added.
        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::IterLimit;
                break 'outer;
            }
            let q_act = active.len();
            let d = j.transpose() * &n_plus;
            let d2 = d.rows(q_act, n - q_act).into_owned();
            let z = j.columns(q_act, n - q_act) * &d2;
            // r_dir = R^{-1} d1: dual movement of active constraints.
            let mut r_dir = vec![0.0f64; q_act];
            for i in (0..q_act).rev() {
                let mut acc = d[i];
                for k2 in (i + 1)..q_act {
                    acc -= r[(i, k2)] * r_dir[k2];
                }
                r_dir[i] = acc / r[(i, i)];
            }

            // Partial step bound: first active inequality whose dual hits 0.
            let mut t1 = f64::INFINITY;
            let mut l1 = usize::MAX;
            for (idx, kindk) in active.iter().enumerate() {
                if matches!(kindk, ConstraintKind::Inequality(_)) && r_dir[idx] > 1e-14 {
                    let cand = u[idx] / r_dir[idx];
                    if cand < t1 {
                        t1 = cand;
                        l1 = idx;
                    }
                }
            }

            let zdn = d2.norm_squared(); // z . n_plus
            let z_zero = zdn <= 1e-22 * (1.0 + d.norm_squared());
            let t2 = if z_zero { f64::INFINITY } else { -s / zdn };

            let t = t1.min(t2);
            if !t.is_finite() {
                // Dual unbounded: no point satisfies this constraint
                // together with the active set.
                status = QpStatus::Infeasible;
                infeas_measure = -s;
                break 'outer;
            }

            // Dual update.
            for (idx, rv) in r_dir.iter().enumerate() {
                u[idx] -= t * rv;
            }
            u_plus += t;

            if !z_zero {
                x += &z * t;
                s = n_plus.dot(&x) - b_plus;
            }

            if t == t2 && !z_zero {
                // Full step: the constraint is now tight; add it.
                add_constraint(&mut r, &mut j, &d, q_act);
                active.push(kind);
                u.push(u_plus);
                break;
            }
            // Partial step: drop the blocking constraint and retry.
            drop_constraint(&mut r, &mut j, &mut active, &mut u, l1);
        }
    }

    // Scatter inequality duals back to their original rows. Equality rows
    // may have been added with a flipped normal, so their multipliers are
    // recovered in one least-squares solve on the stationarity condition.
    let mut lambda = DVector::zeros(m_in);
    for (idx, kind) in active.iter().enumerate() {
        if let ConstraintKind::Inequality(i) = kind {
            lambda[*i] = u[idx];
        }
    }
    let mut y_eq = DVector::zeros(m_eq);
    if m_eq > 0 {
        let grad = &qp.p * &x + &qp.q + qp.a_in.transpose() * &lambda;
        let svd = qp.a_eq.transpose().svd(true, true);
        if let Ok(sol) = svd.solve(&(-grad), 1e-12) {
            y_eq = sol;
        }
    }

    let objective = qp.objective(&x);
    let kkt = qp.kkt_residual(&x, &y_eq, &lambda);
    if status == QpStatus::Optimal && kkt > tol.max(1e-7) {
        // The active-set arithmetic degraded; report honestly.
        status = QpStatus::IterLimit;
    }
    if status == QpStatus::Infeasible {
        return Ok(QpSolution {
            x,
            objective,
            status,
            iterations,
            kkt_residual: infeas_measure,
            lambda,
            y_eq,
        });
    }
    Ok(QpSolution {
        x,
        objective,
        status,
        iterations,
        kkt_residual: kkt,
        lambda,
        y_eq,
    })
}

/// Append a constraint whose J-basis image is `d`: rotate components below
/// row `q_act` into it and store the new column of R.
fn add_constraint(r: &mut DMatrix<f64>, j: &mut DMatrix<f64>, d: &DVector<f64>, q_act: usize) {
    let n = d.len();
    let mut d = d.clone();
    for i in ((q_act + 1)..n).rev() {
        let (a, b) = (d[i - 1], d[i]);
        if b == 0.0 {
            continue;
        }
        let rho = a.hypot(b);
        let (c, s) = (a / rho, b / rho);
        d[i - 1] = rho;
        d[i] = 0.0;
        // Combine columns i-1 and i of J with the same rotation.
        for row in 0..n {
            let (ja, jb) = (j[(row, i - 1)], j[(row, i)]);
            j[(row, i - 1)] = c * ja + s * jb;
            j[(row, i)] = -s * ja + c * jb;
        }
    }
    for i in 0..=q_act {
        r[(i, q_act)] = d[i];
    }
}

/// Remove active constraint `l`, restoring the triangular structure of R.
fn drop_constraint(
    r: &mut DMatrix<f64>,
    j: &mut DMatrix<f64>,
    active: &mut Vec<ConstraintKind>,
    u: &mut Vec<f64>,
    l: usize,
) {
    let q_act = active.len();
    active.remove(l);
    u.remove(l);
    // Shift columns of R left past the removed one.
    for col in l..(q_act - 1) {
        for row in 0..q_act {
            r[(row, col)] = r[(row, col + 1)];
        }
    }
    for row in 0..q_act {
        r[(row, q_act - 1)] = 0.0;
    }
    // Eliminate the subdiagonal introduced by the shift.
    let n = j.nrows();
    for k in l..(q_act - 1) {
        let (a, b) = (r[(k, k)], r[(k + 1, k)]);
        if b == 0.0 {
            continue;
        }
        let rho = a.hypot(b);
        let (c, s) = (a / rho, b / rho);
        for col in k..(q_act - 1) {
            let (ra, rb) = (r[(k, col)], r[(k + 1, col)]);
            r[(k, col)] = c * ra + s * rb;
            r[(k + 1, col)] = -s * ra + c * rb;
        }
        for row in 0..n {
            let (ja, jb) = (j[(row, k)], j[(row, k + 1)]);
            j[(row, k)] = c * ja + s * jb;
            j[(row, k + 1)] = -s * ja + c * jb;
        }
    }
}
