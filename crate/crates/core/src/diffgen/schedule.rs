//! Cosine noise schedule and the closed-form forward/reverse DDPM steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COSINE_OFFSET: f64 = 0.008;
const BETA_MIN: f64 = 1e-8;
const BETA_MAX: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    steps: usize,
    /// `beta[t]` for `t` in `1..=T`; `beta[0]` is unused and zero.
    beta: Vec<f64>,
    /// `alpha_bar[t]` for `t` in `0..=T`, with `alpha_bar[0] = 1`.
    alpha_bar: Vec<f64>,
}

/// Cosine schedule: `ᾱ(t) = f(t)/f(0)` with
/// `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`. Each `β_t` is clipped to
/// `[1e-8, 0.999]` and `ᾱ` is then rebuilt as the running product of
/// `1 − β`, so the stored pair is always self-consistent.
pub fn cosine_schedule(steps: usize, s: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::usage("a noise schedule needs T >= 2"));
    }
    if !(s > 0.0) {
        return Err(Error::usage("cosine offset s must be positive"));
    }
    let f = |t: usize| {
        let x = ((t as f64 / steps as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let raw: Vec<f64> = (0..=steps).map(|t| f(t) / f0).collect();
    let mut beta = vec![0.0; steps + 1];
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        beta[t] = (1.0 - raw[t] / raw[t - 1]).clamp(BETA_MIN, BETA_MAX);
        alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
    }
    Ok(NoiseSchedule { steps, beta, alpha_bar })
}

impl NoiseSchedule {
    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    /// Posterior variance `σ_t² = β_t(1 − ᾱ_{t−1})/(1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
    }
}

/// `A_t = √ᾱ_t·A_0 + √(1 − ᾱ_t)·noise`, elementwise. `t = 0` returns `A_0`.
pub fn forward_diffuse(a0: &[f64], t: usize, noise: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if a0.len() != noise.len() {
        return Err(Error::usage(format!("state has {} entries but noise has {}", a0.len(), noise.len())));
    }
    if t > sched.steps {
        return Err(Error::usage(format!("timestep {t} outside 0..={}", sched.steps)));
    }
    let ab = sched.alpha_bar(t);
    let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(a0.iter().zip(noise).map(|(a, e)| c0 * a + c1 * e).collect())
}

/// One ancestral step `A_t → A_{t−1}`:
/// `μ = (A_t − β_t/√(1 − ᾱ_t)·ε̂)/√α_t`, plus `σ_t·noise` except at `t = 1`.
pub fn reverse_step(a_t: &[f64], t: usize, eps_hat: &[f64], sched: &NoiseSchedule, noise: &[f64]) -> Result<Vec<f64>> {
    if t == 0 || t > sched.steps {
        return Err(Error::usage(format!("timestep {t} outside 1..={}", sched.steps)));
    }
    if a_t.len() != eps_hat.len() || (t > 1 && a_t.len() != noise.len()) {
        return Err(Error::usage("reverse_step inputs differ in length"));
    }
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let sigma = if t > 1 { sched.posterior_variance(t).sqrt() } else { 0.0 };
    Ok(a_t
        .iter()
        .zip(eps_hat)
        .enumerate()
        .map(|(k, (a, e))| {
            let mu = inv_sqrt_alpha * (a - coef * e);
            if t > 1 {
                mu + sigma * noise[k]
            } else {
                mu
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        for steps in [10, 100, 1000] {
            let s = cosine_schedule(steps, DEFAULT_COSINE_OFFSET).unwrap();
            assert_eq!(s.alpha_bar(0), 1.0);
            assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
            assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
            assert!(s.alpha_bar(1) > 0.99 * (1.0 - s.beta(1)));
        }
        assert!(cosine_schedule(1000, DEFAULT_COSINE_OFFSET).unwrap().alpha_bar(1000) < 0.01);
        assert!(cosine_schedule(1, DEFAULT_COSINE_OFFSET).is_err());
    }

    #[test]
    fn t_zero_is_identity_and_t_one_inverts() {
        let s = cosine_schedule(50, DEFAULT_COSINE_OFFSET).unwrap();
        let a0 = [0.3, -1.0, 2.5];
        let noise = [0.7, 0.1, -1.3];
        assert_eq!(forward_diffuse(&a0, 0, &noise, &s).unwrap(), a0.to_vec());
        let a1 = forward_diffuse(&a0, 1, &noise, &s).unwrap();
        let back = reverse_step(&a1, 1, &noise, &s, &[9.0, 9.0, 9.0]).unwrap();
        for (x, y) in back.iter().zip(&a0) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn range_and_shape_errors() {
        let s = cosine_schedule(10, DEFAULT_COSINE_OFFSET).unwrap();
        assert!(forward_diffuse(&[1.0], 1, &[1.0, 2.0], &s).is_err());
        assert!(forward_diffuse(&[1.0], 11, &[1.0], &s).is_err());
        assert!(reverse_step(&[1.0], 0, &[1.0], &s, &[0.0]).is_err());
        assert!(reverse_step(&[1.0], 11, &[1.0], &s, &[0.0]).is_err());
    }
}
