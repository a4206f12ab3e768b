//! Dense strictly convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  lower <= A x <= upper
//! ```
//!
//! with the Goldfarb-Idnani dual active-set method. The factorization
//! `J = L^-T Q` and the triangular `R` are kept up to date with Givens
//! rotations, so each add/drop costs O(n^2). The final active set is polished
//! with one dense KKT solve before the certificate is computed.

use nalgebra::{DMatrix, DVector};

use super::VarMap;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    /// Cost offset, so `objective + constant` is the full weighted cost.
    pub constant: f64,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_lower: DVector<f64>,
    pub ineq_upper: DVector<f64>,
    pub var_map: Option<VarMap>,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        gradient: DVector<f64>,
        ineq_matrix: DMatrix<f64>,
        ineq_lower: DVector<f64>,
        ineq_upper: DVector<f64>,
    ) -> Result<Self> {
        let p = QpProblem {
            hessian,
            gradient,
            constant: 0.0,
            ineq_matrix,
            ineq_lower,
            ineq_upper,
            var_map: None,
        };
        p.check_dims()?;
        Ok(p)
    }

    pub fn n_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn n_rows(&self) -> usize {
        self.ineq_matrix.nrows()
    }

    pub fn check_dims(&self) -> Result<()> {
        let n = self.gradient.len();
        let m = self.ineq_matrix.nrows();
        if self.hessian.shape() != (n, n) {
            return Err(Error::InvalidInput(format!(
                "hessian is {:?}, expected ({n}, {n})",
                self.hessian.shape()
            )));
        }
        if m > 0 && self.ineq_matrix.ncols() != n {
            return Err(Error::InvalidInput("constraint matrix column count mismatch".into()));
        }
        if self.ineq_lower.len() != m || self.ineq_upper.len() != m {
            return Err(Error::InvalidInput("constraint bound length mismatch".into()));
        }
        if self.ineq_lower.iter().zip(self.ineq_upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidInput("lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    /// `1/2 x' H x + g' x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    /// Largest bound violation of `A x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.ineq_matrix * x;
        (0..self.n_rows())
            .map(|r| (self.ineq_lower[r] - ax[r]).max(ax[r] - self.ineq_upper[r]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveConstraint {
    pub row: usize,
    pub bound: Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub active_set: Vec<ActiveConstraint>,
    /// Row multipliers with `H x + g + A' lambda = 0`; positive on upper
    /// bounds, negative on lower bounds.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    /// Stationarity residual `|H x + g + A' lambda|_inf`.
    pub kkt_residual: f64,
    pub primal_residual: f64,
    pub complementarity: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

struct OneSided {
    row: usize,
    bound: Bound,
    /// `normal' x >= rhs`.
    sign: f64,
    rhs: f64,
}

struct Factor {
    /// `J = L^-T Q`.
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
}

impl Factor {
    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        let n = self.j.nrows();
        for i in 0..n {
            let (ja, jb) = (self.j[(i, a)], self.j[(i, b)]);
            self.j[(i, a)] = c * ja + s * jb;
            self.j[(i, b)] = -s * ja + c * jb;
        }
    }

    /// Appends a constraint whose transformed normal is `d = J' n`.
    fn add(&mut self, mut d: DVector<f64>) {
        let n = d.len();
        let q = self.q;
        for k in (q + 1..n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.q += 1;
    }

    /// Removes active constraint `k` and restores triangularity of `R`.
    fn drop(&mut self, k: usize) {
        let q = self.q;
        for col in k..q - 1 {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for j in k..q - 1 {
            let (a, b) = (self.r[(j, j)], self.r[(j + 1, j)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in j..q - 1 {
                let (ra, rb) = (self.r[(j, col)], self.r[(j + 1, col)]);
                self.r[(j, col)] = c * ra + s * rb;
                self.r[(j + 1, col)] = -s * ra + c * rb;
            }
            self.r[(j + 1, j)] = 0.0;
            self.rotate_j(j, j + 1, c, s);
        }
        self.q -= 1;
    }

    /// Solves `R[..q, ..q] r = d[..q]`.
    fn back_solve(&self, d: &DVector<f64>) -> Vec<f64> {
        let q = self.q;
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for j in i + 1..q {
                acc -= self.r[(i, j)] * r[j];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }
}

const VIOLATION_TOL: f64 = 1e-11;
const DEPENDENCE_TOL: f64 = 1e-12;

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    problem.check_dims()?;
    let n = problem.n_vars();
    let h = &problem.hessian;
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("hessian is not positive definite".into()))?;

    let mut cons = Vec::new();
    for row in 0..problem.n_rows() {
        let (lo, up) = (problem.ineq_lower[row], problem.ineq_upper[row]);
        if lo.is_finite() {
            cons.push(OneSided { row, bound: Bound::Lower, sign: 1.0, rhs: lo });
        }
        if up.is_finite() {
            cons.push(OneSided { row, bound: Bound::Upper, sign: -1.0, rhs: -up });
        }
    }
    let rows: Vec<DVector<f64>> = (0..problem.n_rows())
        .map(|r| problem.ineq_matrix.row(r).transpose())
        .collect();
    let row_norms: Vec<f64> = rows.iter().map(|r| r.norm().max(f64::MIN_POSITIVE)).collect();
    let normal = |c: &OneSided| -> DVector<f64> { &rows[c.row] * c.sign };
    let slack = |c: &OneSided, x: &DVector<f64>| c.sign * rows[c.row].dot(x) - c.rhs;

    let linv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let mut f = Factor {
        j: linv.transpose(),
        r: DMatrix::zeros(n, n),
        q: 0,
    };
    let mut x = -chol.solve(&problem.gradient);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; cons.len()];

    let cap = 10 * (n + cons.len()).max(1);
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // Most violated constraint, measured in row-normalized distance.
        let mut pick = None;
        let mut worst = 0.0;
        for (i, c) in cons.iter().enumerate() {
            if is_active[i] {
                continue;
            }
            let s = slack(c, &x) / row_norms[c.row];
            if s < -VIOLATION_TOL * (1.0 + c.rhs.abs() / row_norms[c.row]) && s < worst {
                worst = s;
                pick = Some(i);
            }
        }
        let Some(p) = pick else { break };
        let np = normal(&cons[p]);
        let mut u_plus = u.clone();
        u_plus.push(0.0);

        loop {
            iterations += 1;
            if iterations > cap {
                status = QpStatus::MaxIter;
                break 'outer;
            }
            let d = f.j.transpose() * &np;
            let q = f.q;
            let d2_norm = d.rows(q, n - q).norm();
            let z = if d2_norm <= DEPENDENCE_TOL * d.norm() {
                None
            } else {
                Some(f.j.columns(q, n - q) * d.rows(q, n - q))
            };
            let r = f.back_solve(&d);

            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let t = u_plus[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop_k = Some(k);
                    }
                }
            }
            let t2 = match &z {
                Some(z) => {
                    let ztn = z.dot(&np);
                    (-slack(&cons[p], &x) / ztn).max(0.0)
                }
                None => f64::INFINITY,
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                status = QpStatus::Infeasible;
                break 'outer;
            }

            for (k, rk) in r.iter().enumerate() {
                u_plus[k] -= t * rk;
            }
            u_plus[q] += t;

            if let Some(z) = &z {
                x += z * t;
            }
            if t2 <= t1 {
                f.add(d);
                active.push(p);
                is_active[p] = true;
                u = u_plus;
                continue 'outer;
            }
            let k = drop_k.expect("finite partial step has a blocking constraint");
            u_plus[k] = 0.0;
            u_plus.remove(k);
            is_active[active[k]] = false;
            active.remove(k);
            f.drop(k);
        }
    }

    if status == QpStatus::Infeasible {
        let multipliers = DVector::zeros(problem.n_rows());
        return Ok(QpSolution {
            objective: problem.objective(&x),
            kkt_residual: f64::INFINITY,
            primal_residual: problem.max_violation(&x),
            complementarity: f64::INFINITY,
            x,
            active_set: Vec::new(),
            multipliers,
            iterations,
            status,
        });
    }

    if status == QpStatus::Optimal {
        if let Some((xp, up)) = polish(problem, &cons, &rows, &active, &x, &u) {
            x = xp;
            u = up;
        }
    }

    let mut multipliers = DVector::zeros(problem.n_rows());
    let mut active_set = Vec::with_capacity(active.len());
    for (&i, &ui) in active.iter().zip(&u) {
        let c = &cons[i];
        multipliers[c.row] -= c.sign * ui;
        active_set.push(ActiveConstraint { row: c.row, bound: c.bound });
    }
    active_set.sort();

    let stationarity = h * &x + &problem.gradient + problem.ineq_matrix.transpose() * &multipliers;
    let complementarity = active
        .iter()
        .zip(&u)
        .map(|(&i, &ui)| (ui * slack(&cons[i], &x)).abs())
        .fold(0.0, f64::max);
    Ok(QpSolution {
        objective: problem.objective(&x),
        kkt_residual: stationarity.amax(),
        primal_residual: problem.max_violation(&x),
        complementarity,
        x,
        active_set,
        multipliers,
        iterations,
        status,
    })
}

/// Re-solves the equality-constrained KKT system on the final active set.
/// Returns `None` when that would not improve the certificate.
fn polish(
    problem: &QpProblem,
    cons: &[OneSided],
    rows: &[DVector<f64>],
    active: &[usize],
    x: &DVector<f64>,
    u: &[f64],
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = problem.n_vars();
    let q = active.len();
    let mut kkt = DMatrix::zeros(n + q, n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.hessian);
    let mut rhs = DVector::zeros(n + q);
    rhs.rows_mut(0, n).copy_from(&(-&problem.gradient));
    for (k, &i) in active.iter().enumerate() {
        let c = &cons[i];
        for j in 0..n {
            let v = c.sign * rows[c.row][j];
            kkt[(j, n + k)] = -v;
            kkt[(n + k, j)] = v;
        }
        rhs[n + k] = c.rhs;
    }
    let sol = kkt.lu().solve(&rhs)?;
    let xp = sol.rows(0, n).into_owned();
    let up: Vec<f64> = sol.rows(n, q).iter().copied().collect();
    if up.iter().any(|v| !v.is_finite() || *v < 0.0) || xp.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let residual = |x: &DVector<f64>, u: &[f64]| {
        let mut s = &problem.hessian * x + &problem.gradient;
        for (&i, &ui) in active.iter().zip(u) {
            let c = &cons[i];
            s -= &rows[c.row] * (c.sign * ui);
        }
        s.amax().max(problem.max_violation(x))
    };
    (residual(&xp, &up) <= residual(x, u)).then_some((xp, up))
}
