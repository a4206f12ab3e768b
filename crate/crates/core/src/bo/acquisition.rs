//! Expected improvement and its deterministic maximizer.

use nalgebra::Vector2;
use rand::Rng;

use super::gp::{gp_posterior, GpModel};

pub const N_CANDIDATES: usize = 4096;
pub const REFINE_STEPS: usize = 50;
pub const REFINE_STEP0: f64 = 0.05;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, Hart's double precision rational approximation.
pub fn normal_cdf(x: f64) -> f64 {
    let z = x.abs();
    let tail = if z > 37.0 {
        0.0
    } else {
        let e = (-0.5 * z * z).exp();
        if z < 7.071_067_811_865_47 {
            let mut n = 3.526_249_659_989_11e-2 * z + 0.700_383_064_443_688;
            n = n * z + 6.373_962_203_531_65;
            n = n * z + 33.912_866_078_383;
            n = n * z + 112.079_291_497_871;
            n = n * z + 221.213_596_169_931;
            n = n * z + 220.206_867_912_376;
            let mut d = 8.838_834_764_831_84e-2 * z + 1.755_667_163_182_64;
            d = d * z + 16.064_177_579_207;
            d = d * z + 86.780_732_202_946_1;
            d = d * z + 296.564_248_779_674;
            d = d * z + 637.333_633_378_831;
            d = d * z + 793.826_512_519_948;
            d = d * z + 440.413_735_824_752;
            e * n / d
        } else {
            let mut b = z + 0.65;
            b = z + 4.0 / b;
            b = z + 3.0 / b;
            b = z + 2.0 / b;
            b = z + 1.0 / b;
            e / b / 2.506_628_274_631
        }
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// EI for minimization given posterior mean and standard deviation.
pub fn expected_improvement_from(mean: f64, sd: f64, best: f64) -> f64 {
    let gap = best - mean;
    if sd <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

pub fn expected_improvement(model: &GpModel, x: &Vector2<f64>, best: f64) -> f64 {
    let (m, v) = gp_posterior(model, x);
    expected_improvement_from(m, v.sqrt(), best)
}

/// R2 low-discrepancy points with a random toroidal shift.
pub fn candidates<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<Vector2<f64>> {
    let phi: f64 = 1.324_717_957_244_746;
    let a = Vector2::new(1.0 / phi, 1.0 / (phi * phi));
    let shift = Vector2::new(rng.random::<f64>(), rng.random::<f64>());
    (0..count)
        .map(|k| (shift + a * (k + 1) as f64).map(|v| v.fract()))
        .collect()
}

fn min_dist_sq(x: &Vector2<f64>, data: &[Vector2<f64>]) -> f64 {
    data.iter()
        .map(|d| (x - d).norm_squared())
        .fold(f64::INFINITY, f64::min)
}

/// Maximizes EI over seeded candidates, then refines by coordinate search.
/// Falls back to the candidate farthest from the data when no EI is positive.
pub fn propose_next<R: Rng + ?Sized>(model: &GpModel, rng: &mut R) -> Vector2<f64> {
    let best = model.targets.iter().copied().fold(f64::INFINITY, f64::min);
    let cands = candidates(N_CANDIDATES, rng);

    let mut arg = cands[0];
    let mut top = f64::NEG_INFINITY;
    for c in &cands {
        let ei = expected_improvement(model, c, best);
        if ei > top {
            top = ei;
            arg = *c;
        }
    }
    if top <= 0.0 {
        let mut far = f64::NEG_INFINITY;
        for c in &cands {
            let d = min_dist_sq(c, &model.inputs);
            if d > far {
                far = d;
                arg = *c;
            }
        }
        return arg;
    }

    let mut step = REFINE_STEP0;
    for _ in 0..REFINE_STEPS {
        let mut moved = false;
        for axis in 0..2 {
            for sign in [1.0, -1.0] {
                let mut c = arg;
                c[axis] = (c[axis] + sign * step).clamp(0.0, 1.0);
                if c == arg {
                    continue;
                }
                let ei = expected_improvement(model, &c, best);
                if ei > top {
                    top = ei;
                    arg = c;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    arg
}
