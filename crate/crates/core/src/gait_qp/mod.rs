//! Walking trajectory optimization as a condensed QP.
//!
//! Decision variables are the per-axis CoM jerks over the horizon followed by
//! the free footstep positions:
//!
//! ```text
//!     x = [jx_0 .. jx_{N-1}, jy_0 .. jy_{N-1}, f1x, f1y, .., fMx, fMy]
//! ```
//!
//! The cost is `sum_i alpha |v_i - v_ref_i|^2 + beta |z_i - z_ref_i|^2 +
//! gamma mu_i^2` with `mu_i = |acc_i| / g`, where `z_ref_i` is the center of the
//! support foot at sample `i`. Constraints: friction box on CoM acceleration,
//! ZMP inside the support rectangle, footsteps inside their reachable boxes.

mod solver;

use nalgebra::{DMatrix, DVector, RowDVector, Vector2, Vector3};

use crate::footstep::{reachable_bounds, zmp_reference, FootGeometry, FootstepPlanTemplate, ZmpRefSample};
use crate::lipm::{discretize, rcof_of, step_state, zmp_of, LipParams, LipState};
use crate::{Error, Result};

pub use solver::{solve_qp, ActiveConstraint, Bound, QpProblem, QpSolution, QpStatus};

/// Diagonal Hessian regularization.
pub const REGULARIZATION: f64 = 1e-9;

pub const WEIGHT_MAX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    /// Velocity tracking.
    pub alpha: f64,
    /// ZMP centering.
    pub beta: f64,
    /// Friction usage.
    pub gamma: f64,
}

impl Weights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Weights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    /// `alpha = 1` with the tuned pair.
    pub fn tuned(beta: f64, gamma: f64) -> Result<Self> {
        Weights::new(1.0, beta, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be > 0".into()));
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=WEIGHT_MAX).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} outside [0, {WEIGHT_MAX}]"
                )));
            }
        }
        Ok(())
    }
}

/// Position of each block in the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarMap {
    pub n_samples: usize,
    pub n_footsteps: usize,
}

impl VarMap {
    pub fn n_vars(&self) -> usize {
        2 * self.n_samples + 2 * self.n_footsteps
    }

    pub fn jerk(&self, axis: usize, i: usize) -> usize {
        axis * self.n_samples + i
    }

    pub fn footstep(&self, k: usize, axis: usize) -> usize {
        2 * self.n_samples + 2 * k + axis
    }
}

/// Condensed one-axis prediction over `n` samples.
///
/// Row `i` maps `(x0, u)` to the state at the end of sample `i`:
/// `pos_i = pos_x0.row(i) x0 + pos_u.row(i) u`, likewise for vel, acc, zmp.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pos_x0: DMatrix<f64>,
    pub pos_u: DMatrix<f64>,
    pub vel_x0: DMatrix<f64>,
    pub vel_u: DMatrix<f64>,
    pub acc_x0: DMatrix<f64>,
    pub acc_u: DMatrix<f64>,
    pub zmp_x0: DMatrix<f64>,
    pub zmp_u: DMatrix<f64>,
}

impl Prediction {
    pub fn new(params: &LipParams, n: usize) -> Result<Self> {
        let tr = discretize(params, params.dt_plan)?;
        let mut blocks: [(DMatrix<f64>, DMatrix<f64>); 3] =
            std::array::from_fn(|_| (DMatrix::zeros(n, 3), DMatrix::zeros(n, n)));
        let mut power = tr.state_matrix;
        // impulse[j] = A^(i-j) B for the current row i.
        let mut impulse: Vec<Vector3<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            for v in impulse.iter_mut() {
                *v = tr.state_matrix * *v;
            }
            impulse.push(tr.input_vector);
            for (c, (free, forced)) in blocks.iter_mut().enumerate() {
                for k in 0..3 {
                    free[(i, k)] = power[(c, k)];
                }
                for (j, v) in impulse.iter().enumerate() {
                    forced[(i, j)] = v[c];
                }
            }
            power = tr.state_matrix * power;
        }
        let [(pos_x0, pos_u), (vel_x0, vel_u), (acc_x0, acc_u)] = blocks;
        let lever = params.omega_inv_sq();
        Ok(Prediction {
            zmp_x0: &pos_x0 - &acc_x0 * lever,
            zmp_u: &pos_u - &acc_u * lever,
            pos_x0,
            pos_u,
            vel_x0,
            vel_u,
            acc_x0,
            acc_u,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.pos_u.nrows()
    }

    /// Predicted ZMP samples of one axis.
    pub fn zmp(&self, x0: &Vector3<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.zmp_x0 * x0 + &self.zmp_u * u
    }
}

/// Accumulates `sum w (m' x + c)^2` into `1/2 x' H x + g' x + const`.
struct LeastSquares {
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
    constant: f64,
}

impl LeastSquares {
    fn new(n: usize) -> Self {
        LeastSquares {
            hessian: DMatrix::zeros(n, n),
            gradient: DVector::zeros(n),
            constant: 0.0,
        }
    }

    fn add(&mut self, w: f64, m: &RowDVector<f64>, c: f64) {
        if w == 0.0 {
            return;
        }
        self.hessian.ger(2.0 * w, &m.transpose(), &m.transpose(), 1.0);
        self.gradient.axpy(2.0 * w * c, &m.transpose(), 1.0);
        self.constant += w * c * c;
    }
}

/// Assembles the gait QP for one replanning instant.
///
/// `v_ref` holds one desired velocity per horizon sample. `mu_design` is the
/// friction coefficient the planner assumes.
pub fn build_qp(
    weights: &Weights,
    init: &LipState,
    v_ref: &[Vector2<f64>],
    template: &FootstepPlanTemplate,
    geom: &FootGeometry,
    params: &LipParams,
    mu_design: f64,
) -> Result<QpProblem> {
    weights.validate()?;
    template.validate()?;
    let n = template.n_samples;
    if v_ref.len() != n {
        return Err(Error::InvalidInput(format!(
            "v_ref has {} samples, horizon has {n}",
            v_ref.len()
        )));
    }
    if !(mu_design > 0.0) {
        return Err(Error::InvalidParameter("mu_design must be > 0".into()));
    }
    if !init.is_finite() {
        return Err(Error::InvalidInput("non-finite initial state".into()));
    }
    let pred = Prediction::new(params, n)?;
    let map = VarMap {
        n_samples: n,
        n_footsteps: template.n_free_steps(),
    };
    let nv = map.n_vars();
    let zref = zmp_reference(template);
    let g = params.gravity;

    let mut ls = LeastSquares::new(nv);
    let mut rows: Vec<(RowDVector<f64>, f64, f64)> = Vec::new();
    let acc_bound = mu_design * g / std::f64::consts::SQRT_2;
    let half = geom.support_half_extent();

    for axis in 0..2 {
        let x0 = init.axis(axis);
        let embed = |src: &DMatrix<f64>, i: usize| {
            let mut m = RowDVector::zeros(nv);
            for j in 0..n {
                m[map.jerk(axis, j)] = src[(i, j)];
            }
            m
        };
        for i in 0..n {
            let vel_free = (pred.vel_x0.row(i) * x0)[0];
            ls.add(weights.alpha, &embed(&pred.vel_u, i), vel_free - v_ref[i][axis]);

            let acc_row = embed(&pred.acc_u, i);
            let acc_free = (pred.acc_x0.row(i) * x0)[0];
            ls.add(weights.gamma / (g * g), &acc_row, acc_free);
            rows.push((acc_row, -acc_bound - acc_free, acc_bound - acc_free));

            let mut zmp_row = embed(&pred.zmp_u, i);
            let mut zmp_free = (pred.zmp_x0.row(i) * x0)[0];
            match zref.samples[i] {
                ZmpRefSample::Fixed(p) => zmp_free -= p[axis],
                ZmpRefSample::Free(k) => zmp_row[map.footstep(k, axis)] = -1.0,
            }
            ls.add(weights.beta, &zmp_row, zmp_free);
            rows.push((zmp_row, -half[axis] - zmp_free, half[axis] - zmp_free));
        }
    }

    for k in 0..map.n_footsteps {
        let step = &template.steps[k + 1];
        let prev = if k == 0 { template.steps[0].nominal_pos } else { Vector2::zeros() };
        let reach = reachable_bounds(&prev, step.side, geom);
        for axis in 0..2 {
            let mut m = RowDVector::zeros(nv);
            m[map.footstep(k, axis)] = 1.0;
            if k > 0 {
                m[map.footstep(k - 1, axis)] = -1.0;
            }
            let c = reach.center[axis];
            let e = reach.half_extent[axis];
            rows.push((m, c - e, c + e));
        }
    }

    for i in 0..nv {
        ls.hessian[(i, i)] += REGULARIZATION;
    }
    for k in 0..map.n_footsteps {
        let nominal = template.steps[k + 1].nominal_pos;
        for axis in 0..2 {
            ls.gradient[map.footstep(k, axis)] -= REGULARIZATION * nominal[axis];
            ls.constant += 0.5 * REGULARIZATION * nominal[axis] * nominal[axis];
        }
    }
    // Keep H exactly symmetric.
    let hessian = (&ls.hessian + ls.hessian.transpose()) * 0.5;

    let m = rows.len();
    let mut a = DMatrix::zeros(m, nv);
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    for (r, (row, lo, up)) in rows.into_iter().enumerate() {
        a.set_row(r, &row);
        lower[r] = lo;
        upper[r] = up;
    }

    let mut problem = QpProblem::new(hessian, ls.gradient, a, lower, upper)?;
    problem.constant = ls.constant;
    problem.var_map = Some(map);
    Ok(problem)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitPlan {
    pub jerks: Vec<Vector2<f64>>,
    /// Free footsteps in order.
    pub footsteps: Vec<Vector2<f64>>,
    /// State at the end of each horizon sample.
    pub predicted_com: Vec<LipState>,
    pub predicted_zmp: Vec<Vector2<f64>>,
    pub predicted_rcof: Vec<f64>,
}

/// Decodes a solution and forward-propagates the jerks from `init`.
pub fn extract_plan(
    solution: &QpSolution,
    problem: &QpProblem,
    init: &LipState,
    params: &LipParams,
) -> Result<GaitPlan> {
    if solution.status == QpStatus::Infeasible {
        return Err(Error::Infeasible);
    }
    let map = problem
        .var_map
        .ok_or_else(|| Error::InvalidInput("problem carries no variable map".into()))?;
    if solution.x.len() != map.n_vars() {
        return Err(Error::InvalidInput("solution length does not match problem".into()));
    }
    let x = &solution.x;
    let jerks: Vec<Vector2<f64>> = (0..map.n_samples)
        .map(|i| Vector2::new(x[map.jerk(0, i)], x[map.jerk(1, i)]))
        .collect();
    let footsteps = (0..map.n_footsteps)
        .map(|k| Vector2::new(x[map.footstep(k, 0)], x[map.footstep(k, 1)]))
        .collect();
    let tr = discretize(params, params.dt_plan)?;
    let mut state = *init;
    let mut predicted_com = Vec::with_capacity(map.n_samples);
    for jerk in &jerks {
        state = step_state(&state, jerk, &tr);
        predicted_com.push(state);
    }
    let predicted_zmp = predicted_com.iter().map(|s| zmp_of(s, params)).collect();
    let predicted_rcof = predicted_com.iter().map(|s| rcof_of(s, params)).collect();
    Ok(GaitPlan {
        jerks,
        footsteps,
        predicted_com,
        predicted_zmp,
        predicted_rcof,
    })
}

/// Cost components of a plan, unweighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub velocity: f64,
    pub zmp: f64,
    pub rcof: f64,
}

/// Evaluates the unweighted cost terms of `plan` against the template.
pub fn cost_terms(plan: &GaitPlan, v_ref: &[Vector2<f64>], template: &FootstepPlanTemplate) -> CostTerms {
    let zref = zmp_reference(template).evaluate(&plan.footsteps);
    let mut t = CostTerms { velocity: 0.0, zmp: 0.0, rcof: 0.0 };
    for i in 0..plan.predicted_com.len() {
        t.velocity += (plan.predicted_com[i].vel - v_ref[i]).norm_squared();
        t.zmp += (plan.predicted_zmp[i] - zref[i]).norm_squared();
        t.rcof += plan.predicted_rcof[i].powi(2);
    }
    t
}
