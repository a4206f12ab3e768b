//! Footstep references, support timeline and reachable areas.
//!
//! Support exchange is instantaneous (no double support). The first step of a
//! template is the current stance foot and is fixed; later steps are the
//! footstep decision variables of the QP.

use nalgebra::Vector2;

use crate::lipm::integer_ratio;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Lateral sign: left feet sit at +y.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(Error::InvalidInput(format!("unknown side '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootGeometry {
    /// Support rectangle half-extent along x (m).
    pub half_length: f64,
    /// Support rectangle half-extent along y (m).
    pub half_width: f64,
    /// Lateral distance between left and right foot centers (m).
    pub step_width: f64,
    /// Duration of one single-support phase (s).
    pub step_time: f64,
    /// Stance side at t = 0.
    pub side0: Side,
    /// Half-extents of the reachable box for the next footstep (m).
    pub reach_half_extent: Vector2<f64>,
}

impl Default for FootGeometry {
    fn default() -> Self {
        FootGeometry {
            half_length: 0.10,
            half_width: 0.05,
            step_width: 0.2,
            step_time: 0.8,
            side0: Side::Left,
            reach_half_extent: Vector2::new(0.4, 0.15),
        }
    }
}

impl FootGeometry {
    pub fn validate(&self, dt_plan: f64) -> Result<()> {
        let lengths = [
            self.half_length,
            self.half_width,
            self.step_width,
            self.step_time,
            self.reach_half_extent[0],
            self.reach_half_extent[1],
        ];
        if lengths.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(
                "foot geometry lengths and step time must be > 0".into(),
            ));
        }
        self.samples_per_step(dt_plan).map(|_| ())
    }

    pub fn samples_per_step(&self, dt_plan: f64) -> Result<usize> {
        integer_ratio(self.step_time, dt_plan).ok_or_else(|| {
            Error::InvalidParameter("step_time must be an integer multiple of dt_plan".into())
        })
    }

    pub fn support_half_extent(&self) -> Vector2<f64> {
        Vector2::new(self.half_length, self.half_width)
    }
}

/// Current stance foot and how many planner samples of its phase remain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportState {
    pub pos: Vector2<f64>,
    pub side: Side,
    pub remaining_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedStep {
    pub nominal_pos: Vector2<f64>,
    pub side: Side,
    /// First horizon sample supported by this step.
    pub start_index: usize,
    /// One past the last supported sample; may equal `start_index` when the
    /// step lies beyond the horizon.
    pub end_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootstepPlanTemplate {
    /// `steps[0]` is the fixed stance foot, the rest are decision variables.
    pub steps: Vec<PlannedStep>,
    pub n_samples: usize,
}

impl FootstepPlanTemplate {
    /// Number of footstep decision variables.
    pub fn n_free_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.steps.first() else {
            return Err(Error::InvalidInput("template has no steps".into()));
        };
        if first.start_index != 0 {
            return Err(Error::InvalidInput("first step must start at sample 0".into()));
        }
        for w in self.steps.windows(2) {
            if w[0].end_index != w[1].start_index {
                return Err(Error::InvalidInput("support intervals must tile the horizon".into()));
            }
            if w[0].side == w[1].side {
                return Err(Error::InvalidInput("consecutive steps must alternate sides".into()));
            }
        }
        if self.steps.iter().any(|s| s.end_index < s.start_index) {
            return Err(Error::InvalidInput("support interval with negative length".into()));
        }
        if self.steps.last().map(|s| s.end_index) != Some(self.n_samples) {
            return Err(Error::InvalidInput("support intervals must cover the horizon".into()));
        }
        Ok(())
    }

    /// Index of the step supporting horizon sample `i`.
    pub fn step_at(&self, i: usize) -> usize {
        self.steps
            .iter()
            .position(|s| s.start_index <= i && i < s.end_index)
            .expect("template tiles the horizon")
    }
}

/// Builds the stance step plus `n_steps` upcoming nominal steps.
///
/// Consecutive steps advance by `v_des * step_time` and alternate about the
/// CoM path at `±step_width / 2`. Horizon sample `i` is the predicted state at
/// time `(i + 1) * dt_plan`.
pub fn nominal_footsteps(
    v_des: &Vector2<f64>,
    geom: &FootGeometry,
    support: &SupportState,
    n_steps: usize,
    n_samples: usize,
    dt_plan: f64,
) -> Result<FootstepPlanTemplate> {
    if n_steps < 1 {
        return Err(Error::InvalidInput("need at least one upcoming step".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidInput("empty horizon".into()));
    }
    let per_step = geom.samples_per_step(dt_plan)?;
    if support.remaining_samples == 0 || support.remaining_samples > per_step {
        return Err(Error::InvalidInput(format!(
            "remaining support samples must be in 1..={per_step}, got {}",
            support.remaining_samples
        )));
    }

    let stride = v_des * geom.step_time;
    let path_y = support.pos[1] - support.side.sign() * geom.step_width / 2.0;
    let mut steps = Vec::with_capacity(n_steps + 1);
    let mut side = support.side;
    let mut start = 0;
    let mut end = support.remaining_samples.min(n_samples);
    for k in 0..=n_steps {
        let nominal_pos = if k == 0 {
            support.pos
        } else {
            let kf = k as f64;
            Vector2::new(
                support.pos[0] + kf * stride[0],
                path_y + kf * stride[1] + side.sign() * geom.step_width / 2.0,
            )
        };
        if k == n_steps {
            end = n_samples;
        }
        steps.push(PlannedStep {
            nominal_pos,
            side,
            start_index: start,
            end_index: end,
        });
        side = side.opposite();
        start = end;
        end = (end + per_step).min(n_samples);
    }
    Ok(FootstepPlanTemplate { steps, n_samples })
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedBox {
    pub center: Vector2<f64>,
    pub half_extent: Vector2<f64>,
}

impl AlignedBox {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let d = p - self.center;
        d[0].abs() <= self.half_extent[0] && d[1].abs() <= self.half_extent[1]
    }
}

pub type ReachableBox = AlignedBox;

/// Support assignment of one horizon sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportSample {
    /// Index into `template.steps`.
    pub step: usize,
    /// Support polygon, centered on the nominal step position.
    pub polygon: AlignedBox,
}

pub fn support_timeline(template: &FootstepPlanTemplate, geom: &FootGeometry) -> Vec<SupportSample> {
    (0..template.n_samples)
        .map(|i| {
            let step = template.step_at(i);
            SupportSample {
                step,
                polygon: AlignedBox {
                    center: template.steps[step].nominal_pos,
                    half_extent: geom.support_half_extent(),
                },
            }
        })
        .collect()
}

/// Reachable box for a step on `side` placed after `prev_step`.
pub fn reachable_bounds(prev_step: &Vector2<f64>, side: Side, geom: &FootGeometry) -> ReachableBox {
    AlignedBox {
        center: prev_step + Vector2::new(0.0, side.sign() * geom.step_width),
        half_extent: geom.reach_half_extent,
    }
}

/// ZMP reference as an affine map of the footstep decision variables.
///
/// Sample `i` references either the fixed stance foot (`offset`) or the
/// decision footstep `var` (0-based over the free steps).
#[derive(Debug, Clone, PartialEq)]
pub struct ZmpReference {
    pub samples: Vec<ZmpRefSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZmpRefSample {
    Fixed(Vector2<f64>),
    Free(usize),
}

impl ZmpReference {
    pub fn evaluate(&self, free_steps: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        self.samples
            .iter()
            .map(|s| match *s {
                ZmpRefSample::Fixed(p) => p,
                ZmpRefSample::Free(k) => free_steps[k],
            })
            .collect()
    }
}

pub fn zmp_reference(template: &FootstepPlanTemplate) -> ZmpReference {
    let samples = (0..template.n_samples)
        .map(|i| match template.step_at(i) {
            0 => ZmpRefSample::Fixed(template.steps[0].nominal_pos),
            k => ZmpRefSample::Free(k - 1),
        })
        .collect();
    ZmpReference { samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn support(side: Side, remaining: usize) -> SupportState {
        SupportState {
            pos: Vector2::new(0.0, side.sign() * 0.1),
            side,
            remaining_samples: remaining,
        }
    }

    #[test]
    fn zero_velocity_steps_in_place() {
        let g = FootGeometry::default();
        let t = nominal_footsteps(&Vector2::zeros(), &g, &support(Side::Left, 8), 3, 32, 0.1).unwrap();
        for w in t.steps.windows(2) {
            assert_eq!(w[0].nominal_pos[0], w[1].nominal_pos[0]);
            assert!(((w[0].nominal_pos[1] - w[1].nominal_pos[1]).abs() - 0.2).abs() < 1e-12);
        }
        assert_eq!(t.steps[2].nominal_pos, t.steps[0].nominal_pos);
    }

    #[test]
    fn stride_follows_velocity() {
        let g = FootGeometry::default();
        let t = nominal_footsteps(&Vector2::new(0.5, 0.0), &g, &support(Side::Right, 3), 2, 16, 0.1).unwrap();
        let x: Vec<f64> = t.steps.iter().map(|s| s.nominal_pos[0]).collect();
        assert!((x[1] - x[0] - 0.4).abs() < 1e-12);
        assert!((x[2] - x[0] - 0.8).abs() < 1e-12);
        assert_eq!(t.steps[1].side, Side::Left);
        assert!((t.steps[1].nominal_pos[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn intervals_tile_horizon() {
        let g = FootGeometry::default();
        for remaining in 1..=8 {
            let t = nominal_footsteps(&Vector2::new(0.3, 0.0), &g, &support(Side::Left, remaining), 2, 16, 0.1)
                .unwrap();
            t.validate().unwrap();
            assert_eq!(t.steps[0].end_index, remaining);
            assert_eq!(t.steps[1].end_index, remaining + 8);
            assert_eq!(t.steps[2].end_index, 16);
            assert_eq!(support_timeline(&t, &g).len(), 16);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = FootGeometry::default();
        let v = Vector2::zeros();
        assert!(nominal_footsteps(&v, &g, &support(Side::Left, 8), 0, 16, 0.1).is_err());
        assert!(nominal_footsteps(&v, &g, &support(Side::Left, 0), 2, 16, 0.1).is_err());
        assert!(nominal_footsteps(&v, &g, &support(Side::Left, 9), 2, 16, 0.1).is_err());
        assert!(nominal_footsteps(&v, &g, &support(Side::Left, 8), 2, 16, 0.3).is_err());
    }

    #[test]
    fn timeline_boxes_center_on_support() {
        let g = FootGeometry::default();
        let t = nominal_footsteps(&Vector2::new(0.2, 0.1), &g, &support(Side::Left, 5), 2, 16, 0.1).unwrap();
        for (i, s) in support_timeline(&t, &g).iter().enumerate() {
            let step = &t.steps[s.step];
            assert!(step.start_index <= i && i < step.end_index);
            assert_eq!(s.polygon.center, step.nominal_pos);
            assert!(s.polygon.contains(&step.nominal_pos));
        }
    }

    #[test]
    fn reachable_box_centers() {
        let g = FootGeometry::default();
        let l = reachable_bounds(&Vector2::zeros(), Side::Left, &g);
        let r = reachable_bounds(&Vector2::zeros(), Side::Right, &g);
        assert_eq!(l.center, Vector2::new(0.0, 0.2));
        assert_eq!(r.center, Vector2::new(0.0, -0.2));
        assert_eq!(l.half_extent, Vector2::new(0.4, 0.15));
    }

    #[test]
    fn reachable_box_contains_nominal_next_step() {
        // Velocity grid up to half_extent / step_time on both axes.
        let g = FootGeometry::default();
        let vmax = g.reach_half_extent.component_div(&Vector2::repeat(g.step_time));
        for i in 0..=10 {
            for j in 0..=10 {
                let v = Vector2::new(
                    -vmax[0] + 2.0 * vmax[0] * i as f64 / 10.0,
                    -vmax[1] + 2.0 * vmax[1] * j as f64 / 10.0,
                );
                for side in [Side::Left, Side::Right] {
                    let s = support(side, 8);
                    let t = nominal_footsteps(&v, &g, &s, 1, 16, 0.1).unwrap();
                    let b = reachable_bounds(&s.pos, t.steps[1].side, &g);
                    let d = (t.steps[1].nominal_pos - b.center).abs() - b.half_extent;
                    assert!(d.max() <= 1e-12, "v={v:?} side={side:?}");
                }
            }
        }
    }

    #[test]
    fn zmp_reference_is_piecewise_constant() {
        let g = FootGeometry::default();
        let t = nominal_footsteps(&Vector2::new(0.3, 0.0), &g, &support(Side::Left, 4), 2, 16, 0.1).unwrap();
        let r = zmp_reference(&t);
        let free: Vec<_> = t.steps[1..].iter().map(|s| s.nominal_pos).collect();
        let z = r.evaluate(&free);
        for (i, zi) in z.iter().enumerate() {
            assert_eq!(*zi, t.steps[t.step_at(i)].nominal_pos);
        }
        assert!(z[..4].iter().all(|p| *p == t.steps[0].nominal_pos));
    }

    #[test]
    fn single_step_reference_is_constant() {
        let g = FootGeometry::default();
        let t = nominal_footsteps(&Vector2::new(0.3, 0.0), &g, &support(Side::Left, 8), 1, 8, 0.1).unwrap();
        let z = zmp_reference(&t).evaluate(&[Vector2::new(9.0, 9.0)]);
        assert!(z.iter().all(|p| *p == t.steps[0].nominal_pos));
    }

    proptest! {
        #[test]
        fn mirror_symmetry(vx in -0.5f64..0.5, vy in -0.2f64..0.2, px in -1.0f64..1.0, py in -1.0f64..1.0, rem in 1usize..=8) {
            let g = FootGeometry::default();
            let s = SupportState { pos: Vector2::new(px, py), side: Side::Left, remaining_samples: rem };
            let m = SupportState { pos: Vector2::new(px, -py), side: Side::Right, remaining_samples: rem };
            let a = nominal_footsteps(&Vector2::new(vx, vy), &g, &s, 2, 16, 0.1).unwrap();
            let b = nominal_footsteps(&Vector2::new(vx, -vy), &g, &m, 2, 16, 0.1).unwrap();
            for (sa, sb) in a.steps.iter().zip(&b.steps) {
                prop_assert!((sa.nominal_pos[0] - sb.nominal_pos[0]).abs() < 1e-12);
                prop_assert!((sa.nominal_pos[1] + sb.nominal_pos[1]).abs() < 1e-12);
                prop_assert_eq!(sa.side, sb.side.opposite());
                prop_assert_eq!((sa.start_index, sa.end_index), (sb.start_index, sb.end_index));
            }
        }

        #[test]
        fn sides_alternate(rem in 1usize..=8, n_steps in 1usize..5, n in 1usize..40) {
            let g = FootGeometry::default();
            let t = nominal_footsteps(&Vector2::new(0.3, 0.0), &g, &support(Side::Right, rem), n_steps, n, 0.1).unwrap();
            prop_assert!(t.validate().is_ok());
        }
    }
}
