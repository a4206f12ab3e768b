#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use robust_gait::footstep::{nominal_footsteps, zmp_reference, FootGeometry, FootstepPlanTemplate, Side, SupportState};
use robust_gait::gait_qp::{build_qp, solve_qp, QpProblem, QpStatus, VarMap, Weights};
use robust_gait::lipm::{discretize, rcof_of, step_state, zmp_of, LipParams, LipState};
use robust_gait::Vector2;

pub const N: usize = 16;
pub const M: usize = 2;

#[derive(Debug, Clone)]
pub struct Instance {
    pub init: LipState,
    pub v_ref: Vec<Vector2<f64>>,
    pub template: FootstepPlanTemplate,
    pub geom: FootGeometry,
    pub params: LipParams,
    pub mu_design: f64,
}

impl Instance {
    pub fn problem(&self, w: &Weights) -> QpProblem {
        build_qp(w, &self.init, &self.v_ref, &self.template, &self.geom, &self.params, self.mu_design).unwrap()
    }
}

/// Random walking instance with a non-empty feasible set.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    loop {
        let inst = draw_instance(rng);
        let p = inst.problem(&Weights::tuned(1.0, 1.0).unwrap());
        if solve_qp(&p).unwrap().status == QpStatus::Optimal {
            return inst;
        }
    }
}

fn draw_instance<R: Rng>(rng: &mut R) -> Instance {
    let geom = FootGeometry::default();
    let params = LipParams::default();
    let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
    let stance = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3));
    let support = SupportState {
        pos: stance,
        side,
        remaining_samples: rng.random_range(1..=8),
    };
    let v = Vector2::new(rng.random_range(0.0..0.5), rng.random_range(-0.1..0.1));
    let template = nominal_footsteps(&v, &geom, &support, M, N, params.dt_plan).unwrap();
    let init = LipState {
        pos: stance + Vector2::new(rng.random_range(-0.03..0.03), rng.random_range(-0.02..0.02)),
        vel: Vector2::new(rng.random_range(0.0..0.3), rng.random_range(-0.05..0.05)),
        acc: Vector2::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
    };
    let v_ref = (0..N)
        .map(|_| v + Vector2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)))
        .collect();
    Instance {
        init,
        v_ref,
        template,
        geom,
        params,
        mu_design: rng.random_range(0.3..1.0),
    }
}

pub fn random_weights<R: Rng>(rng: &mut R) -> Weights {
    Weights::tuned(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)).unwrap()
}

/// Cost evaluated by direct propagation, without the condensed matrices.
pub fn direct_cost(inst: &Instance, w: &Weights, x: &DVector<f64>) -> f64 {
    let map = VarMap {
        n_samples: N,
        n_footsteps: M,
    };
    let tr = discretize(&inst.params, inst.params.dt_plan).unwrap();
    let steps: Vec<Vector2<f64>> = (0..M)
        .map(|k| Vector2::new(x[map.footstep(k, 0)], x[map.footstep(k, 1)]))
        .collect();
    let zref = zmp_reference(&inst.template).evaluate(&steps);
    let mut s = inst.init;
    let mut cost = 0.0;
    for i in 0..N {
        let jerk = Vector2::new(x[map.jerk(0, i)], x[map.jerk(1, i)]);
        s = step_state(&s, &jerk, &tr);
        cost += w.alpha * (s.vel - inst.v_ref[i]).norm_squared();
        cost += w.beta * (zmp_of(&s, &inst.params) - zref[i]).norm_squared();
        cost += w.gamma * rcof_of(&s, &inst.params).powi(2);
    }
    cost
}

/// Largest step `t` in [0, 1] with `x + t d` inside the row bounds, given a
/// feasible `x`.
pub fn max_step(p: &QpProblem, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let ax = &p.ineq_matrix * x;
    let ad = &p.ineq_matrix * d;
    let mut t: f64 = 1.0;
    for r in 0..p.n_rows() {
        if ad[r] > 0.0 && p.ineq_upper[r].is_finite() {
            t = t.min(((p.ineq_upper[r] - ax[r]) / ad[r]).max(0.0));
        } else if ad[r] < 0.0 && p.ineq_lower[r].is_finite() {
            t = t.min(((p.ineq_lower[r] - ax[r]) / ad[r]).max(0.0));
        }
    }
    t
}

/// Random feasible points around a feasible anchor.
pub fn feasible_points<R: Rng>(p: &QpProblem, anchor: &DVector<f64>, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let n = p.n_vars();
    (0..count)
        .map(|k| {
            let scale = [1e-3, 1e-2, 1e-1, 1.0, 10.0][k % 5];
            let d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0) * scale);
            let t = max_step(p, anchor, &d);
            anchor + d * (t * rng.random_range(0.0..1.0))
        })
        .collect()
}

pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}
