use super::{ParameterStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update. Parameters are left untouched if any
/// gradient is non-finite.
pub fn adam_step<T: Real>(params: &mut ParameterStore<T>, cfg: &AdamConfig) -> Result<()> {
    if !params.grads_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    params.step += 1;
    let t = params.step as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    for p in params.iter_mut() {
        ndarray::Zip::from(&mut p.value)
            .and(&p.grad)
            .and(&mut p.m)
            .and(&mut p.v)
            .for_each(|w, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            });
    }
    params.touch();
    if !params.values_finite() {
        return Err(Error::Diverged("non-finite parameter after update".into()));
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(params: &mut ParameterStore<T>, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .map(|p| p.grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        params.scale_grads(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.add_vector("w", vec![v]).unwrap();
        s
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let mut s = scalar_store(1.5);
        s.by_index_mut(0).m[[0, 0]] = 0.4;
        s.by_index_mut(0).v[[0, 0]] = 0.2;
        adam_step(&mut s, &AdamConfig::default()).unwrap();
        let p = s.by_index(0);
        let expected = 1.5 - 1e-3 * (0.36 / 0.1) / ((0.1998f64 / 0.001).sqrt() + 1e-8);
        assert!((p.value[[0, 0]] - expected).abs() < 1e-12);
        assert!((p.m[[0, 0]] - 0.36).abs() < 1e-15);
        assert!((p.v[[0, 0]] - 0.1998).abs() < 1e-15);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn two_hand_computed_steps() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut s = scalar_store(1.0);
        // Step 1, g = 2: m = 0.2, v = 0.004, mhat = 2, vhat = 4, update 0.1 * 2 / (2 + 1e-8).
        s.grad_mut("w").unwrap()[[0, 0]] = 2.0;
        adam_step(&mut s, &cfg).unwrap();
        let w1 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((s.by_index(0).value[[0, 0]] - w1).abs() < 1e-15);
        // Step 2, g = -1: m = 0.18 - 0.1 = 0.08, v = 0.003996 + 0.001 = 0.004996.
        s.grad_mut("w").unwrap()[[0, 0]] = -1.0;
        adam_step(&mut s, &cfg).unwrap();
        let mhat = 0.08 / (1.0 - 0.81);
        let vhat = 0.004996 / (1.0 - 0.999f64 * 0.999);
        let w2 = w1 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        assert!((s.by_index(0).value[[0, 0]] - w2).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut s = scalar_store(0.0);
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..5000 {
            s.grad_mut("w").unwrap()[[0, 0]] = 0.37;
            adam_step(&mut s, &cfg).unwrap();
            let w = s.by_index(0).value[[0, 0]];
            last_step = prev - w;
            prev = w;
        }
        assert!((last_step - cfg.lr).abs() < 1e-6 * cfg.lr.max(1.0));
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut s = scalar_store(1.0);
        s.grad_mut("w").unwrap()[[0, 0]] = f64::NAN;
        let err = adam_step(&mut s, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("diverged"));
        assert_eq!(s.by_index(0).value[[0, 0]], 1.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut s = ParameterStore::<f64>::new();
        s.add_vector("a", vec![3.0, 4.0]).unwrap();
        s.grad_mut("a")
            .unwrap()
            .assign(&ndarray::array![[3.0, 4.0]]);
        assert_eq!(clip_grad_norm(&mut s, 1.0), 5.0);
        let g = &s.get("a").unwrap().grad;
        assert!((g[[0, 0]] - 0.6).abs() < 1e-15 && (g[[0, 1]] - 0.8).abs() < 1e-15);
    }
}
