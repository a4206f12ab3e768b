//! Linear inverted pendulum with the CoM jerk as input.
//!
//! Each horizontal axis is an independent triple integrator
//! `(pos, vel, acc)` driven by piecewise-constant jerk. The ZMP is the
//! output `pos - (h/g) acc`.

use nalgebra::{Matrix3, RowVector3, Vector2, Vector3};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipParams {
    /// Constant CoM height (m).
    pub com_height: f64,
    pub gravity: f64,
    /// Planner sample time (s).
    pub dt_plan: f64,
    /// Plant integration step (s).
    pub dt_plant: f64,
}

impl Default for LipParams {
    fn default() -> Self {
        LipParams {
            com_height: 0.8,
            gravity: 9.81,
            dt_plan: 0.1,
            dt_plant: 0.01,
        }
    }
}

impl LipParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.com_height, self.gravity, self.dt_plan, self.dt_plant]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("LIP parameters must be finite".into()));
        }
        if self.com_height <= 0.0 {
            return Err(Error::InvalidParameter("com_height must be > 0".into()));
        }
        if self.gravity <= 0.0 {
            return Err(Error::InvalidParameter("gravity must be > 0".into()));
        }
        if self.dt_plant <= 0.0 || self.dt_plant > self.dt_plan {
            return Err(Error::InvalidParameter(
                "need 0 < dt_plant <= dt_plan".into(),
            ));
        }
        self.plant_steps_per_sample()?;
        Ok(())
    }

    /// Number of plant steps in one planner sample.
    pub fn plant_steps_per_sample(&self) -> Result<usize> {
        integer_ratio(self.dt_plan, self.dt_plant).ok_or_else(|| {
            Error::InvalidParameter("dt_plan must be an integer multiple of dt_plant".into())
        })
    }

    /// `h / g`, the ZMP lever of the CoM acceleration.
    pub fn omega_inv_sq(&self) -> f64 {
        self.com_height / self.gravity
    }
}

/// Returns `a / b` when it is (within rounding) a positive integer.
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() <= 1e-9 * k.max(1.0) {
        Some(k as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LipState {
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
    pub acc: Vector2<f64>,
}

impl LipState {
    pub fn at_rest(pos: Vector2<f64>) -> Self {
        LipState {
            pos,
            ..Default::default()
        }
    }

    /// `(pos, vel, acc)` of one axis.
    pub fn axis(&self, k: usize) -> Vector3<f64> {
        Vector3::new(self.pos[k], self.vel[k], self.acc[k])
    }

    pub fn set_axis(&mut self, k: usize, x: &Vector3<f64>) {
        self.pos[k] = x[0];
        self.vel[k] = x[1];
        self.acc[k] = x[2];
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.vel.iter()).chain(self.acc.iter()).all(|v| v.is_finite())
    }
}

/// One-axis exact transition for a fixed sample time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisTransition {
    pub dt: f64,
    pub state_matrix: Matrix3<f64>,
    pub input_vector: Vector3<f64>,
    pub zmp_row: RowVector3<f64>,
}

pub fn discretize(params: &LipParams, dt: f64) -> Result<AxisTransition> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("sample time must be > 0, got {dt}")));
    }
    let dt2 = dt * dt;
    #[rustfmt::skip]
    let state_matrix = Matrix3::new(
        1.0, dt,  0.5 * dt2,
        0.0, 1.0, dt,
        0.0, 0.0, 1.0,
    );
    Ok(AxisTransition {
        dt,
        state_matrix,
        input_vector: Vector3::new(dt2 * dt / 6.0, 0.5 * dt2, dt),
        zmp_row: RowVector3::new(1.0, 0.0, -params.omega_inv_sq()),
    })
}

impl AxisTransition {
    pub fn apply(&self, x: &Vector3<f64>, jerk: f64) -> Vector3<f64> {
        self.state_matrix * x + self.input_vector * jerk
    }
}

/// Propagates both axes over one sample of constant jerk.
pub fn step_state(state: &LipState, jerk: &Vector2<f64>, transition: &AxisTransition) -> LipState {
    let mut next = *state;
    for k in 0..2 {
        next.set_axis(k, &transition.apply(&state.axis(k), jerk[k]));
    }
    next
}

pub fn zmp_of(state: &LipState, params: &LipParams) -> Vector2<f64> {
    state.pos - state.acc * params.omega_inv_sq()
}

/// Required coefficient of friction on flat ground, `|acc| / g`.
pub fn rcof_of(state: &LipState, params: &LipParams) -> f64 {
    state.acc.norm() / params.gravity
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> LipParams {
        LipParams::default()
    }

    #[test]
    fn discretize_input_vector() {
        let t = discretize(&params(), 0.1).unwrap();
        assert!((t.input_vector[0] - 1.6667e-4).abs() < 1e-8);
        assert!((t.input_vector[1] - 5.0e-3).abs() < 1e-15);
        assert!((t.input_vector[2] - 0.1).abs() < 1e-15);
        assert!((t.zmp_row[2] + 0.081549).abs() < 1e-6);
        assert_eq!(t.zmp_row[0], 1.0);
        assert_eq!(t.zmp_row[1], 0.0);
    }

    #[test]
    fn discretize_tiny_dt_is_identity() {
        let t = discretize(&params(), 1e-12).unwrap();
        assert!((t.state_matrix - Matrix3::identity()).abs().max() < 1e-11);
    }

    #[test]
    fn discretize_rejects_nonpositive() {
        assert!(matches!(discretize(&params(), 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(discretize(&params(), -0.1), Err(Error::InvalidParameter(_))));
        assert!(discretize(&params(), f64::NAN).is_err());
    }

    #[test]
    fn step_from_rest_with_unit_jerk() {
        let t = discretize(&params(), 0.1).unwrap();
        let s = step_state(&LipState::default(), &Vector2::new(1.0, 0.0), &t);
        assert!((s.pos[0] - 1.0e-3 / 6.0).abs() < 1e-15);
        assert!((s.vel[0] - 5.0e-3).abs() < 1e-15);
        assert!((s.acc[0] - 0.1).abs() < 1e-15);
        assert_eq!(s.pos[1], 0.0);
    }

    #[test]
    fn ballistic_step() {
        let t = discretize(&params(), 0.1).unwrap();
        let s0 = LipState {
            pos: Vector2::new(1.0, 0.0),
            vel: Vector2::new(0.5, 0.0),
            acc: Vector2::zeros(),
        };
        let s = step_state(&s0, &Vector2::zeros(), &t);
        assert!((s.pos[0] - 1.05).abs() < 1e-15);
        assert_eq!(s.vel[0], 0.5);
        assert_eq!(s.acc[0], 0.0);
    }

    #[test]
    fn zmp_and_rcof_examples() {
        let p = params();
        let mut s = LipState::at_rest(Vector2::new(0.3, -0.2));
        assert_eq!(zmp_of(&s, &p), s.pos);
        assert_eq!(rcof_of(&s, &p), 0.0);

        s.pos = Vector2::zeros();
        s.acc = Vector2::new(1.0, 0.0);
        let z = zmp_of(&s, &p);
        assert!((z[0] + 0.081549).abs() < 1e-6);
        assert_eq!(z[1], 0.0);

        s.acc = Vector2::new(0.981, 0.0);
        assert!((rcof_of(&s, &p) - 0.1).abs() < 1e-15);
        s.acc = Vector2::new(3.0, 4.0);
        assert!((rcof_of(&s, &p) - 5.0 / 9.81).abs() < 1e-15);
        assert!((rcof_of(&s, &p) - 0.50968).abs() < 1e-5);
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        assert_eq!(params().plant_steps_per_sample().unwrap(), 10);
        let bad = LipParams { dt_plant: 0.03, ..params() };
        assert!(bad.validate().is_err());
        let bad = LipParams { com_height: 0.0, ..params() };
        assert!(bad.validate().is_err());
        let bad = LipParams { dt_plant: 0.2, ..params() };
        assert!(bad.validate().is_err());
    }

    fn state_strategy() -> impl Strategy<Value = LipState> {
        prop::array::uniform6(-2.0f64..2.0).prop_map(|v| LipState {
            pos: Vector2::new(v[0], v[1]),
            vel: Vector2::new(v[2], v[3]),
            acc: Vector2::new(v[4], v[5]),
        })
    }

    proptest! {
        #[test]
        fn matches_analytic_polynomials(s in state_strategy(), jx in -10.0f64..10.0, dt in 0.001f64..0.5) {
            let t = discretize(&params(), dt).unwrap();
            let n = step_state(&s, &Vector2::new(jx, 0.0), &t);
            let (p, v, a) = (s.pos[0], s.vel[0], s.acc[0]);
            let pos = p + v * dt + a * dt * dt / 2.0 + jx * dt.powi(3) / 6.0;
            let vel = v + a * dt + jx * dt * dt / 2.0;
            let acc = a + jx * dt;
            prop_assert!((n.pos[0] - pos).abs() <= 1e-12);
            prop_assert!((n.vel[0] - vel).abs() <= 1e-12);
            prop_assert!((n.acc[0] - acc).abs() <= 1e-12);
        }

        #[test]
        fn semigroup(s in state_strategy(), j in prop::array::uniform2(-10.0f64..10.0), dt in 0.001f64..0.3) {
            let p = params();
            let jerk = Vector2::new(j[0], j[1]);
            let one = discretize(&p, dt).unwrap();
            let two = discretize(&p, 2.0 * dt).unwrap();
            let a = step_state(&step_state(&s, &jerk, &one), &jerk, &one);
            let b = step_state(&s, &jerk, &two);
            prop_assert!((a.pos - b.pos).amax() <= 1e-12);
            prop_assert!((a.vel - b.vel).amax() <= 1e-12);
            prop_assert!((a.acc - b.acc).amax() <= 1e-12);
        }

        #[test]
        fn zmp_is_linear(s1 in state_strategy(), s2 in state_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let p = params();
            let mix = LipState {
                pos: s1.pos * a + s2.pos * b,
                vel: s1.vel * a + s2.vel * b,
                acc: s1.acc * a + s2.acc * b,
            };
            let lhs = zmp_of(&mix, &p);
            let rhs = zmp_of(&s1, &p) * a + zmp_of(&s2, &p) * b;
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }

        #[test]
        fn rcof_is_homogeneous(s in state_strategy(), k in -5.0f64..5.0) {
            let p = params();
            let mut scaled = s;
            scaled.acc *= k;
            prop_assert!((rcof_of(&scaled, &p) - k.abs() * rcof_of(&s, &p)).abs() <= 1e-12);
        }
    }
}
