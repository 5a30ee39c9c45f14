//! One-dimensional Gaussian-process regression with a squared-exponential
//! kernel, and the upper-confidence-bound acquisition used to steer
//! Bayesian optimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JITTER_ATTEMPTS: usize = 6;
const JITTER_BASE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub noise_variance: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { signal_variance: 1.0, lengthscale: 0.5, noise_variance: 1e-4 }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.lengthscale > 0.0 && self.noise_variance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kernel needs signal variance > 0, lengthscale > 0, noise variance >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// σ_f²·exp(−(a−b)²/(2ℓ²)), without the noise term.
    pub fn covariance(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        self.signal_variance * (-d * d / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// Observed `(input, value)` pairs plus the kernel. The prior mean is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpState {
    pub kernel: KernelParams,
    pub observations: Vec<(f64, f64)>,
}

impl GpState {
    pub fn new(kernel: KernelParams) -> Self {
        Self { kernel, observations: Vec::new() }
    }

    pub fn observe(&mut self, u: f64, value: f64) {
        self.observations.push((u, value));
    }

    pub fn fit(&self) -> Result<GpPosterior> {
        self.kernel.validate()?;
        let n = self.observations.len();
        let inputs: Vec<f64> = self.observations.iter().map(|o| o.0).collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] = self.kernel.covariance(inputs[i], inputs[j]);
            }
            gram[i * n + i] += self.kernel.noise_variance;
        }
        let chol = cholesky_with_jitter(&gram, n)?;
        let targets: Vec<f64> = self.observations.iter().map(|o| o.1).collect();
        let alpha = solve_upper_t(&chol, n, &solve_lower(&chol, n, &targets));
        Ok(GpPosterior { kernel: self.kernel, inputs, chol, alpha })
    }
}

/// A fitted posterior, reusable across many queries.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    kernel: KernelParams,
    inputs: Vec<f64>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
}

impl GpPosterior {
    /// Posterior mean and standard deviation of the latent function at `u`.
    pub fn predict(&self, u: f64) -> (f64, f64) {
        let n = self.inputs.len();
        let k: Vec<f64> = self.inputs.iter().map(|&x| self.kernel.covariance(u, x)).collect();
        let mean = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = solve_lower(&self.chol, n, &k);
        let var = self.kernel.signal_variance - v.iter().map(|x| x * x).sum::<f64>();
        // Round-off at observed points of a noiseless GP leaves ~1e-16 residue.
        let var = if var <= 1e-13 * self.kernel.signal_variance { 0.0 } else { var };
        (mean, var.sqrt())
    }
}

pub fn gp_fit_posterior(state: &GpState, u: f64) -> Result<(f64, f64)> {
    Ok(state.fit()?.predict(u))
}

fn cholesky(a: &[f64], n: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            if i == j {
                sum += jitter;
            }
            for p in 0..j {
                sum -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if !(sum > 0.0 && sum.is_finite()) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Plain Cholesky first; on failure, diagonal jitter of 1e-10 times the mean
/// diagonal, doubled on each of up to six attempts.
fn cholesky_with_jitter(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if let Some(l) = cholesky(a, n, 0.0) {
        return Ok(l);
    }
    let scale = (0..n).map(|i| a[i * n + i]).sum::<f64>() / n.max(1) as f64;
    let mut jitter = JITTER_BASE * scale.max(f64::MIN_POSITIVE);
    for attempt in 1..=JITTER_ATTEMPTS {
        if let Some(l) = cholesky(a, n, jitter) {
            log::debug!("kernel matrix needed jitter {jitter:e} (attempt {attempt})");
            return Ok(l);
        }
        if attempt < JITTER_ATTEMPTS {
            jitter *= 2.0;
        }
    }
    Err(Error::Singular { attempts: JITTER_ATTEMPTS, jitter })
}

fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|j| l[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

fn solve_upper_t(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| l[j * n + i] * x[j]).sum();
        x[i] = (b[i] - s) / l[i * n + i];
    }
    x
}

/// μ + β·σ
pub fn ucb(mean: f64, std: f64, beta: f64) -> f64 {
    mean + beta * std
}

/// Number of evenly spaced candidates scanned when maximizing the acquisition.
pub const ACQUISITION_GRID: usize = 1000;

/// Argmax of UCB over evenly spaced points spanning `[lo, hi]`; ties go to the smallest point.
pub fn maximize_ucb(state: &GpState, lo: f64, hi: f64, beta: f64) -> Result<f64> {
    let post = state.fit()?;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..ACQUISITION_GRID {
        let u = if i + 1 == ACQUISITION_GRID {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (ACQUISITION_GRID - 1) as f64
        };
        let (m, s) = post.predict(u);
        let a = ucb(m, s, beta);
        if a > best.1 {
            best = (u, a);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_without_observations() {
        let k = KernelParams { signal_variance: 2.25, ..Default::default() };
        let (m, s) = gp_fit_posterior(&GpState::new(k), 0.3).unwrap();
        assert_eq!(m, 0.0);
        assert!((s - 1.5).abs() < 1e-15);
    }

    #[test]
    fn ucb_arithmetic() {
        assert_eq!(ucb(0.4, 0.3, 0.0), 0.4);
        assert_eq!(ucb(0.4, 0.0, 5.0), 0.4);
        assert!((ucb(0.5, 0.1, 2.0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn duplicate_noiseless_inputs_need_jitter() {
        let k = KernelParams { noise_variance: 0.0, ..Default::default() };
        let mut gp = GpState::new(k);
        gp.observe(0.0, 0.5);
        gp.observe(0.0, 0.5);
        let (m, _) = gp_fit_posterior(&gp, 0.0).unwrap();
        assert!((m - 0.5).abs() < 1e-6);
    }

    #[test]
    fn singular_matrix_reported() {
        let k = KernelParams { noise_variance: 0.0, ..Default::default() };
        let gp = GpState { kernel: k, observations: vec![(f64::NAN, 0.0)] };
        assert!(matches!(gp.fit(), Err(Error::Singular { attempts: 6, .. })));
    }

    #[test]
    fn acquisition_prior_tie_goes_low() {
        let gp = GpState::new(KernelParams::default());
        assert_eq!(maximize_ucb(&gp, -4.0, -1.0, 2.0).unwrap(), -4.0);
    }
}
