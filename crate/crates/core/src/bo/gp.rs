//! Gaussian-process surrogate with an anisotropic squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector2, Vector4};

use crate::error::{Error, Result};

pub const NOISE_FLOOR: f64 = 1e-8;
pub const N_STARTS: usize = 8;
const MAX_ASCENT_ITERS: usize = 60;
const CHOLESKY_RETRIES: usize = 3;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub signal_var: f64,
    pub lengthscales: Vector2<f64>,
    pub noise_var: f64,
}

impl Kernel {
    /// Log-parameters in the order (signal_var, l0, l1, noise_var).
    pub fn to_log(&self) -> Vector4<f64> {
        Vector4::new(
            self.signal_var.ln(),
            self.lengthscales[0].ln(),
            self.lengthscales[1].ln(),
            self.noise_var.ln(),
        )
    }

    pub fn from_log(theta: &Vector4<f64>) -> Self {
        Kernel {
            signal_var: theta[0].exp(),
            lengthscales: Vector2::new(theta[1].exp(), theta[2].exp()),
            noise_var: theta[3].exp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.signal_var > 0.0
            && self.signal_var.is_finite()
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.noise_var >= NOISE_FLOOR
            && self.noise_var.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad kernel {self:?}")))
        }
    }

    /// Noise-free covariance.
    pub fn eval(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
        let dx = (a[0] - b[0]) / self.lengthscales[0];
        let dy = (a[1] - b[1]) / self.lengthscales[1];
        self.signal_var * (-0.5 * (dx * dx + dy * dy)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub inputs: Vec<Vector2<f64>>,
    pub targets: Vec<f64>,
    /// Constant prior mean, the sample mean of the targets.
    pub prior_mean: f64,
    pub kernel: Kernel,
    pub chol_factor: DMatrix<f64>,
    pub alpha_weights: DVector<f64>,
}

fn gram(inputs: &[Vector2<f64>], kernel: &Kernel) -> DMatrix<f64> {
    let n = inputs.len();
    DMatrix::from_fn(n, n, |i, j| kernel.eval(&inputs[i], &inputs[j]))
}

fn factor(inputs: &[Vector2<f64>], kernel: &Kernel) -> Option<Cholesky<f64, Dyn>> {
    let mut k = gram(inputs, kernel);
    for i in 0..inputs.len() {
        k[(i, i)] += kernel.noise_var;
    }
    Cholesky::new(k)
}

fn mean_of(targets: &[f64]) -> f64 {
    targets.iter().sum::<f64>() / targets.len() as f64
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on the data.
    pub fn new(inputs: Vec<Vector2<f64>>, targets: Vec<f64>, kernel: Kernel) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs vs {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if !targets.iter().all(|y| y.is_finite()) || !inputs.iter().all(|x| x.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput("non-finite GP data".into()));
        }
        kernel.validate()?;
        let chol = factor(&inputs, &kernel)
            .ok_or_else(|| Error::Numerical("kernel matrix not positive definite".into()))?;
        let prior_mean = mean_of(&targets);
        let resid = DVector::from_iterator(targets.len(), targets.iter().map(|y| y - prior_mean));
        let alpha_weights = chol.solve(&resid);
        Ok(GpModel {
            inputs,
            targets,
            prior_mean,
            kernel,
            chol_factor: chol.l(),
            alpha_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn cross(&self, x: &Vector2<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.inputs.iter().map(|xi| self.kernel.eval(xi, x)))
    }
}

/// Value and gradient of the log evidence with respect to the log-parameters
/// (signal_var, l0, l1, noise_var).
pub fn log_marginal_likelihood(model: &GpModel) -> (f64, Vector4<f64>) {
    let n = model.len();
    let l = &model.chol_factor;
    let alpha = &model.alpha_weights;
    let resid = DVector::from_iterator(n, model.targets.iter().map(|y| y - model.prior_mean));

    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let value = -0.5 * resid.dot(alpha) - log_det - 0.5 * n as f64 * LN_2PI;

    let chol = Cholesky::pack_dirty(l.clone());
    let k_inv = chol.inverse();
    // W = alpha alpha^T - K^-1, grad_j = 0.5 tr(W dK_j)
    let mut grad = Vector4::zeros();
    let ls = model.kernel.lengthscales;
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - k_inv[(i, j)];
            let kf = model.kernel.eval(&model.inputs[i], &model.inputs[j]);
            let d = model.inputs[i] - model.inputs[j];
            grad[0] += w * kf;
            grad[1] += w * kf * (d[0] / ls[0]).powi(2);
            grad[2] += w * kf * (d[1] / ls[1]).powi(2);
            if i == j {
                grad[3] += w * model.kernel.noise_var;
            }
        }
    }
    (value, 0.5 * grad)
}

/// Posterior mean and latent variance at `x`.
pub fn gp_posterior(model: &GpModel, x: &Vector2<f64>) -> (f64, f64) {
    let ks = model.cross(x);
    let mean = model.prior_mean + ks.dot(&model.alpha_weights);
    let v = model
        .chol_factor
        .solve_lower_triangular(&ks)
        .unwrap_or_else(|| DVector::zeros(model.len()));
    let var = (model.kernel.signal_var - v.dot(&v)).max(0.0);
    (mean, var)
}

/// Box on the log-parameters used by the fit.
#[derive(Debug, Clone, Copy)]
pub struct LogBounds {
    pub lower: Vector4<f64>,
    pub upper: Vector4<f64>,
}

impl LogBounds {
    pub fn for_targets(targets: &[f64], noise_floor: f64) -> Self {
        let m = mean_of(targets);
        let var = targets.iter().map(|y| (y - m).powi(2)).sum::<f64>() / targets.len() as f64;
        let v = var.max(1e-4);
        LogBounds {
            lower: Vector4::new((1e-2 * v).ln(), 0.02f64.ln(), 0.02f64.ln(), noise_floor.ln()),
            upper: Vector4::new((1e2 * v).ln(), 5.0f64.ln(), 5.0f64.ln(), v.max(noise_floor).ln()),
        }
    }

    pub fn clamp(&self, theta: &Vector4<f64>) -> Vector4<f64> {
        theta.zip_zip_map(&self.lower, &self.upper, |t, lo, hi| t.clamp(lo, hi))
    }

    /// Deterministic quasi-random start points inside the box.
    pub fn starts(&self, count: usize) -> Vec<Vector4<f64>> {
        // Kronecker sequence with the 4-D generalized golden ratio
        let phi: f64 = 1.220_744_084_605_759_5;
        let alpha = Vector4::new(1.0 / phi, 1.0 / phi.powi(2), 1.0 / phi.powi(3), 1.0 / phi.powi(4));
        (0..count)
            .map(|k| {
                let u = alpha.map(|a| (0.5 + a * k as f64).fract());
                self.lower + (self.upper - self.lower).component_mul(&u)
            })
            .collect()
    }
}

fn evaluate(inputs: &[Vector2<f64>], targets: &[f64], theta: &Vector4<f64>) -> Option<(f64, Vector4<f64>)> {
    let model = GpModel::new(inputs.to_vec(), targets.to_vec(), Kernel::from_log(theta)).ok()?;
    let (v, g) = log_marginal_likelihood(&model);
    (v.is_finite() && g.iter().all(|x| x.is_finite())).then_some((v, g))
}

fn ascend(
    inputs: &[Vector2<f64>],
    targets: &[f64],
    bounds: &LogBounds,
    start: Vector4<f64>,
) -> Option<(Vector4<f64>, f64)> {
    let mut theta = bounds.clamp(&start);
    let (mut value, mut grad) = evaluate(inputs, targets, &theta)?;
    let mut step = 1.0;
    for _ in 0..MAX_ASCENT_ITERS {
        let mut improved = false;
        let mut t = step;
        for _ in 0..30 {
            let cand = bounds.clamp(&(theta + t * grad));
            let moved = cand - theta;
            if moved.norm() < 1e-12 {
                break;
            }
            if let Some((v, g)) = evaluate(inputs, targets, &cand) {
                if v >= value + 1e-4 * grad.dot(&moved) && v > value {
                    theta = cand;
                    value = v;
                    grad = g;
                    improved = true;
                    step = (t * 2.0).min(10.0);
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Some((theta, value))
}

/// Fits kernel hyperparameters by multi-start projected gradient ascent on
/// the log evidence.
pub fn gp_fit(inputs: &[Vector2<f64>], targets: &[f64]) -> Result<GpModel> {
    if inputs.len() < 2 || inputs.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "gp_fit needs >= 2 matching samples, got {} inputs and {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let mut floor = NOISE_FLOOR;
    for _ in 0..=CHOLESKY_RETRIES {
        let bounds = LogBounds::for_targets(targets, floor);
        let mut best: Option<(Vector4<f64>, f64)> = None;
        for start in bounds.starts(N_STARTS) {
            if let Some((theta, value)) = ascend(inputs, targets, &bounds, start) {
                if best.is_none_or(|(_, b)| value > b) {
                    best = Some((theta, value));
                }
            }
        }
        if let Some((theta, _)) = best {
            if let Ok(model) = GpModel::new(inputs.to_vec(), targets.to_vec(), Kernel::from_log(&theta)) {
                return Ok(model);
            }
        }
        floor *= 10.0;
    }
    Err(Error::Numerical("GP Cholesky failed after noise retries".into()))
}
