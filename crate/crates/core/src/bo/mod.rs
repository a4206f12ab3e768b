//! Outer tuning loop: closed-loop cost, GP surrogate, expected improvement
//! and the sequential driver.

pub mod acquisition;
pub mod gp;

use nalgebra::Vector2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gait_qp::WEIGHT_MAX;
use crate::plant::RolloutResult;

pub use acquisition::{expected_improvement, expected_improvement_from, normal_cdf, normal_pdf, propose_next};
pub use gp::{gp_fit, gp_posterior, log_marginal_likelihood, GpModel, Kernel};

/// Value recorded in place of a non-finite objective.
pub const PENALTY_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub lambda: f64,
    pub h_des: f64,
    pub threshold: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            lambda: 100.0,
            h_des: 0.8,
            threshold: 0.05,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter("lambda must be >= 0".into()));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidParameter("threshold must be >= 0".into()));
        }
        if !self.h_des.is_finite() {
            return Err(Error::InvalidParameter("h_des must be finite".into()));
        }
        Ok(())
    }
}

/// Fall penalty `max(|h - h_des| - threshold, 0)`.
pub fn fall_penalty(h_terminal: f64, h_des: f64, threshold: f64) -> f64 {
    ((h_terminal - h_des).abs() - threshold).max(0.0)
}

/// Squared velocity tracking error over the desired series plus the
/// weighted fall penalty. Samples missing after a fall count as zero velocity.
pub fn outer_cost(rollout: &RolloutResult, v_des_series: &[Vector2<f64>], cost: &CostParams) -> Result<f64> {
    cost.validate()?;
    let tracking: f64 = v_des_series
        .iter()
        .enumerate()
        .map(|(i, v_des)| {
            let v = rollout.measured_vel.get(i).copied().unwrap_or_else(Vector2::zeros);
            (v - v_des).norm_squared()
        })
        .sum();
    Ok(tracking + cost.lambda * fall_penalty(rollout.h_terminal, cost.h_des, cost.threshold))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSample {
    pub beta: f64,
    pub gamma: f64,
    pub j: f64,
    pub fell: bool,
    /// Objective returned a non-finite value, replaced by [`PENALTY_CAP`].
    pub capped: bool,
    pub eval_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneHistory {
    pub samples: Vec<ObjectiveSample>,
    pub min_so_far: Vec<f64>,
    pub best_delta: Vector2<f64>,
}

impl TuneHistory {
    pub fn from_samples(samples: Vec<ObjectiveSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty history".into()));
        }
        let mut min_so_far = Vec::with_capacity(samples.len());
        let mut best = 0;
        for (k, s) in samples.iter().enumerate() {
            if s.j < samples[best].j {
                best = k;
            }
            min_so_far.push(samples[best].j);
        }
        let best_delta = Vector2::new(samples[best].beta, samples[best].gamma);
        Ok(TuneHistory {
            samples,
            min_so_far,
            best_delta,
        })
    }

    pub fn best(&self) -> &ObjectiveSample {
        let best = self.min_so_far[self.min_so_far.len() - 1];
        self.samples.iter().find(|s| s.j == best).unwrap_or(&self.samples[0])
    }
}

/// Axis-aligned search box for (beta, gamma).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub beta: (f64, f64),
    pub gamma: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            beta: (0.0, WEIGHT_MAX),
            gamma: (0.0, WEIGHT_MAX),
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0 <= lo && lo <= hi && hi <= WEIGHT_MAX) {
                return Err(Error::InvalidParameter(format!(
                    "{name} range [{lo}, {hi}] must lie within [0, {WEIGHT_MAX}]"
                )));
            }
        }
        Ok(())
    }

    pub fn to_unit(&self, delta: &Vector2<f64>) -> Vector2<f64> {
        let f = |v: f64, (lo, hi): (f64, f64)| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        Vector2::new(f(delta[0], self.beta), f(delta[1], self.gamma))
    }

    pub fn from_unit(&self, u: &Vector2<f64>) -> Vector2<f64> {
        let f = |v: f64, (lo, hi): (f64, f64)| (lo + v * (hi - lo)).clamp(lo, hi);
        Vector2::new(f(u[0], self.beta), f(u[1], self.gamma))
    }

    pub fn upper_corner(&self) -> Vector2<f64> {
        Vector2::new(self.beta.1, self.gamma.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneSettings {
    pub budget: usize,
    pub init_points: usize,
    pub seed: u64,
    pub bounds: Bounds,
}

impl Default for TuneSettings {
    fn default() -> Self {
        TuneSettings {
            budget: 50,
            init_points: 5,
            seed: 0,
            bounds: Bounds::default(),
        }
    }
}

impl TuneSettings {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.init_points < 1 || self.budget < self.init_points + 1 {
            return Err(Error::InvalidParameter(format!(
                "need budget >= init_points + 1 and init_points >= 1, got {} and {}",
                self.budget, self.init_points
            )));
        }
        Ok(())
    }
}

/// `n` points in the unit square, one per row and column stratum.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vector2<f64>> {
    let mut cols: Vec<Vec<usize>> = (0..2).map(|_| (0..n).collect()).collect();
    for c in &mut cols {
        c.shuffle(rng);
    }
    (0..n)
        .map(|i| {
            let u0 = (cols[0][i] as f64 + rng.random::<f64>()) / n as f64;
            let u1 = (cols[1][i] as f64 + rng.random::<f64>()) / n as f64;
            Vector2::new(u0, u1)
        })
        .collect()
}

fn warp(j: f64) -> f64 {
    j.max(0.0).ln_1p()
}

/// Warped GP targets. Falls and capped values are clipped to the median
/// non-fall target.
pub fn surrogate_targets(samples: &[ObjectiveSample]) -> Vec<f64> {
    let mut ok: Vec<f64> = samples.iter().filter(|s| !s.fell && !s.capped).map(|s| warp(s.j)).collect();
    ok.sort_by(f64::total_cmp);
    let cap = if ok.is_empty() { f64::INFINITY } else { ok[ok.len() / 2] };
    samples
        .iter()
        .map(|s| {
            let y = warp(s.j);
            if (s.fell || s.capped) && cap.is_finite() {
                y.min(cap)
            } else {
                y
            }
        })
        .collect()
}

/// Minimizes `objective(beta, gamma) -> (J, fell)` with exactly
/// `settings.budget` calls: the upper corner of the bounds first, then a
/// Latin hypercube, then expected-improvement proposals.
pub fn tune<F>(mut objective: F, settings: &TuneSettings) -> Result<TuneHistory>
where
    F: FnMut(f64, f64) -> Result<(f64, bool)>,
{
    settings.validate()?;
    let bounds = settings.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut samples: Vec<ObjectiveSample> = Vec::with_capacity(settings.budget);
    let mut inputs: Vec<Vector2<f64>> = Vec::with_capacity(settings.budget);

    let mut eval = |delta: Vector2<f64>, samples: &mut Vec<ObjectiveSample>| -> Result<()> {
        let (j, fell) = objective(delta[0], delta[1])?;
        let capped = !j.is_finite();
        let j = if capped { PENALTY_CAP } else { j };
        samples.push(ObjectiveSample {
            beta: delta[0],
            gamma: delta[1],
            j,
            fell,
            capped,
            eval_index: samples.len(),
        });
        Ok(())
    };

    let mut design = vec![bounds.to_unit(&bounds.upper_corner())];
    design.extend(latin_hypercube(settings.init_points - 1, &mut rng));
    for u in design {
        let delta = bounds.from_unit(&u);
        eval(delta, &mut samples)?;
        inputs.push(bounds.to_unit(&delta));
    }

    while samples.len() < settings.budget {
        let model = gp_fit(&inputs, &surrogate_targets(&samples))?;
        let u = propose_next(&model, &mut rng);
        let delta = bounds.from_unit(&u);
        eval(delta, &mut samples)?;
        inputs.push(bounds.to_unit(&delta));
    }
    TuneHistory::from_samples(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::TrajectorySample;

    fn rollout(vels: Vec<Vector2<f64>>, fell: bool) -> RolloutResult {
        RolloutResult {
            measured_vel: vels,
            com_traj: Vec::new(),
            zmp_traj: Vec::new(),
            samples: Vec::<TrajectorySample>::new(),
            slip_accum: 0.0,
            fell,
            fall_time: fell.then_some(0.0),
            h_terminal: if fell { 0.0 } else { 0.8 },
            n_samples_total: 3,
            n_replans: 0,
        }
    }

    #[test]
    fn outer_cost_cases() {
        let v = vec![Vector2::new(0.3, 0.0); 3];
        let c = CostParams::default();
        assert_eq!(outer_cost(&rollout(v.clone(), false), &v, &c).unwrap(), 0.0);
        let far = CostParams { lambda: 1e9, ..c };
        assert_eq!(outer_cost(&rollout(v.clone(), false), &v, &far).unwrap(), 0.0);
        // one recorded sample, two missing after the fall
        let j = outer_cost(&rollout(vec![Vector2::new(0.3, 0.0)], true), &v, &c).unwrap();
        assert!((j - (75.0 + 2.0 * 0.09)).abs() < 1e-12);
        assert!(outer_cost(&rollout(v.clone(), false), &v, &CostParams { lambda: -1.0, ..c }).is_err());
    }

    #[test]
    fn history_running_min() {
        let js = [5.0, 7.0, 3.0, 3.0, 4.0, 1.0];
        let samples = js
            .iter()
            .enumerate()
            .map(|(k, &j)| ObjectiveSample {
                beta: k as f64,
                gamma: 0.0,
                j,
                fell: false,
                capped: false,
                eval_index: k,
            })
            .collect();
        let h = TuneHistory::from_samples(samples).unwrap();
        assert_eq!(h.min_so_far, vec![5.0, 5.0, 3.0, 3.0, 3.0, 1.0]);
        assert_eq!(h.best_delta, Vector2::new(5.0, 0.0));
    }

    #[test]
    fn lhs_strata() {
        let pts = latin_hypercube(7, &mut ChaCha8Rng::seed_from_u64(1));
        for axis in 0..2 {
            let mut bins: Vec<usize> = pts.iter().map(|p| (p[axis] * 7.0) as usize).collect();
            bins.sort();
            assert_eq!(bins, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tune_starts_at_upper_corner_and_spends_budget() {
        let settings = TuneSettings {
            budget: 8,
            ..TuneSettings::default()
        };
        let mut calls = 0;
        let h = tune(
            |b, g| {
                calls += 1;
                Ok((b + g, false))
            },
            &settings,
        )
        .unwrap();
        assert_eq!(calls, 8);
        assert_eq!((h.samples[0].beta, h.samples[0].gamma), (1000.0, 1000.0));
        assert!(h.min_so_far.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_objective_is_capped() {
        let settings = TuneSettings {
            budget: 6,
            ..TuneSettings::default()
        };
        let h = tune(|b, _| Ok((if b > 900.0 { f64::NAN } else { b }, false)), &settings).unwrap();
        assert!(h.samples[0].capped);
        assert_eq!(h.samples[0].j, PENALTY_CAP);
        assert!(h.samples.iter().all(|s| s.j.is_finite()));
    }

    #[test]
    fn rejects_bad_settings() {
        let s = TuneSettings {
            budget: 5,
            ..TuneSettings::default()
        };
        assert!(tune(|_, _| Ok((0.0, false)), &s).is_err());
        let s = TuneSettings {
            bounds: Bounds {
                beta: (0.0, 2000.0),
                gamma: (0.0, 1000.0),
            },
            ..TuneSettings::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn falls_clip_to_median() {
        let mk = |j: f64, fell: bool| ObjectiveSample {
            beta: 0.0,
            gamma: 0.0,
            j,
            fell,
            capped: false,
            eval_index: 0,
        };
        let samples = [mk(1.0, false), mk(3.0, false), mk(7.0, false), mk(500.0, true), mk(0.5, true)];
        let y = surrogate_targets(&samples);
        assert_eq!(&y[..3], &[2f64.ln(), 4f64.ln(), 8f64.ln()]);
        assert_eq!(y[3], 4f64.ln());
        assert_eq!(y[4], 1.5f64.ln());
        let all_fell = surrogate_targets(&[mk(9.0, true), mk(99.0, true)]);
        assert_eq!(all_fell, vec![10f64.ln(), 100f64.ln()]);
    }
}
