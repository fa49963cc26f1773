use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// DDPM noise tables. Step indices are 1-based throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

/// Linear betas from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need steps >= 1 and 0 < beta_start <= beta_end < 1, got {steps}, {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    let sigmas = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
            (betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])).sqrt()
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
        sigmas,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k - 1]
    }

    /// `alpha_bar(k - 1)`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar_prev(&self, k: usize) -> f64 {
        if k == 1 {
            1.0
        } else {
            self.alpha_bars[k - 2]
        }
    }

    /// Posterior standard deviation of the reverse step. Zero at `k = 1`.
    pub fn sigma(&self, k: usize) -> f64 {
        self.sigmas[k - 1]
    }

    /// One reverse step without the stochastic term.
    pub fn denoise_mean(&self, k: usize, noisy: f64, eps_hat: f64) -> f64 {
        (noisy - self.beta(k) / (1.0 - self.alpha_bar(k)).sqrt() * eps_hat) / self.alpha(k).sqrt()
    }
}

/// `sqrt(abar_k) a0 + sqrt(1 - abar_k) eps`.
pub fn add_noise(
    a0: ArrayView2<f64>,
    k: usize,
    eps: ArrayView2<f64>,
    sched: &NoiseSchedule,
) -> Array2<f64> {
    let ab = sched.alpha_bar(k);
    let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
    ndarray::Zip::from(&a0)
        .and(&eps)
        .map_collect(|&a, &e| c0 * a + c1 * e)
}

/// Ancestral sampling of `batch` vectors of width `dim`. `predict` receives
/// the current iterate and the step index and returns the noise estimate.
pub fn ddpm_sample<R: Rng>(
    sched: &NoiseSchedule,
    batch: usize,
    dim: usize,
    rng: &mut R,
    mut predict: impl FnMut(&Array2<f64>, usize) -> Result<Array2<f64>>,
) -> Result<Array2<f64>> {
    let mut a = Array2::from_shape_simple_fn((batch, dim), || rng.sample::<f64, _>(StandardNormal));
    for k in (1..=sched.steps()).rev() {
        let eps = predict(&a, k)?;
        if eps.dim() != a.dim() {
            return Err(Error::DimensionMismatch(format!(
                "noise estimate is {:?}, iterate is {:?}",
                eps.dim(),
                a.dim()
            )));
        }
        ndarray::Zip::from(&mut a)
            .and(&eps)
            .for_each(|x, &e| *x = sched.denoise_mean(k, *x, e));
        if k > 1 {
            let s = sched.sigma(k);
            a.mapv_inplace(|x| x + s * rng.sample::<f64, _>(StandardNormal));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplerDiverged(k));
        }
    }
    Ok(a)
}
