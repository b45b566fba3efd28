use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Largest β allowed by the rescaled linear and cosine schedules.
pub const BETA_MAX_CLIP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Linear,
    Cosine,
}

/// Diffusion constants indexed by step `t ∈ 1..=T`; `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule rescales the 1000-step range `[1e-4, 0.02]` by `1000/T`.
    pub fn build(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps < 1 {
            bail!(Config, "diffusion needs at least one step");
        }
        let betas = match kind {
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (1e-4 * scale, 0.02 * scale);
                (0..steps)
                    .map(|i| {
                        let f = if steps == 1 { 1.0 } else { i as f64 / (steps - 1) as f64 };
                        (lo + f * (hi - lo)).min(BETA_MAX_CLIP)
                    })
                    .collect()
            }
            ScheduleKind::Cosine => {
                let s = 0.008;
                let f = |t: f64| ((t / steps as f64 + s) / (1.0 + s) * PI / 2.0).cos().powi(2);
                (1..=steps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(1e-8, BETA_MAX_CLIP)).collect()
            }
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            bail!(Config, "diffusion needs at least one step");
        }
        if let Some(b) = beta.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            bail!(Config, "beta must lie in (0, 1), got {b}");
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let posterior_var = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar, posterior_var })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            bail!(Usage, "diffusion step {t} outside 1..={}", self.steps());
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t` with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    /// `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        let i = self.check(t)?;
        if x0.len() != eps.len() {
            bail!(Usage, "q_sample: {} values vs {} noise values", x0.len(), eps.len());
        }
        let (a, b) = (self.alpha_bar[i].sqrt(), (1.0 - self.alpha_bar[i]).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Reverse-step mean `(x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t`.
    pub fn p_mean(&self, x_t: &[f64], t: usize, eps_hat: &[f64]) -> Result<Vec<f64>> {
        let i = self.check(t)?;
        if x_t.len() != eps_hat.len() {
            bail!(Usage, "p_mean: {} values vs {} noise values", x_t.len(), eps_hat.len());
        }
        let c = self.beta[i] / (1.0 - self.alpha_bar[i]).sqrt();
        let inv = 1.0 / self.alpha[i].sqrt();
        Ok(x_t.iter().zip(eps_hat).map(|(x, e)| inv * (x - c * e)).collect())
    }

    /// One ancestral step; `z` is standard normal noise and is ignored at `t = 1`.
    pub fn p_sample_step(&self, x_t: &[f64], t: usize, eps_hat: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let mut mean = self.p_mean(x_t, t, eps_hat)?;
        if t > 1 {
            if z.len() != mean.len() {
                bail!(Usage, "p_sample_step: {} noise values for {} coordinates", z.len(), mean.len());
            }
            let sigma = self.posterior_var[t - 1].sqrt();
            mean.iter_mut().zip(z).for_each(|(m, z)| *m += sigma * z);
        }
        Ok(mean)
    }

    /// Ancestral step through the clean-sample estimate, clamped to
    /// `[-clip, clip]` before forming the posterior mean. Identical to
    /// [`Self::p_sample_step`] whenever the clamp is inactive; it keeps a
    /// slightly wrong `ε̂` at nearly pure-noise steps from being amplified by
    /// `1/√α_t`.
    pub fn p_sample_step_clipped(&self, x_t: &[f64], t: usize, eps_hat: &[f64], z: &[f64], clip: f64) -> Result<Vec<f64>> {
        if !(clip > 0.0) {
            bail!(Usage, "clip must be positive, got {clip}");
        }
        let i = self.check(t)?;
        let x0 = self.predict_x0(x_t, t, eps_hat)?;
        let prev = self.alpha_bar(t - 1);
        let c0 = prev.sqrt() * self.beta[i] / (1.0 - self.alpha_bar[i]);
        let ct = self.alpha[i].sqrt() * (1.0 - prev) / (1.0 - self.alpha_bar[i]);
        let mut mean: Vec<f64> = x0.iter().zip(x_t).map(|(x0, x)| c0 * x0.clamp(-clip, clip) + ct * x).collect();
        if t > 1 {
            if z.len() != mean.len() {
                bail!(Usage, "p_sample_step: {} noise values for {} coordinates", z.len(), mean.len());
            }
            let sigma = self.posterior_var[i].sqrt();
            mean.iter_mut().zip(z).for_each(|(m, z)| *m += sigma * z);
        }
        Ok(mean)
    }

    /// Clean-sample estimate `(x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
    pub fn predict_x0(&self, x_t: &[f64], t: usize, eps_hat: &[f64]) -> Result<Vec<f64>> {
        let i = self.check(t)?;
        let (a, b) = (self.alpha_bar[i].sqrt(), (1.0 - self.alpha_bar[i]).sqrt());
        Ok(x_t.iter().zip(eps_hat).map(|(x, e)| (x - b * e) / a).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = NoiseSchedule::from_betas(alloc::vec![0.5]).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.posterior_var(1), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(NoiseSchedule::build(0, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::from_betas(alloc::vec![0.1, 1.0]).is_err());
        let s = NoiseSchedule::build(20, ScheduleKind::Linear).unwrap();
        assert!(matches!(s.q_sample(&[0.0], 0, &[0.0]), Err(crate::Error::Usage(_))));
        assert!(matches!(s.q_sample(&[0.0], 21, &[0.0]), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn q_sample_examples() {
        let s = NoiseSchedule::from_betas(alloc::vec![0.25]).unwrap();
        assert_eq!(s.q_sample(&[0.0, 0.0], 1, &[1.0, 1.0]).unwrap(), alloc::vec![0.5, 0.5]);
        let d = NoiseSchedule::build(20, ScheduleKind::Linear).unwrap();
        let x = d.q_sample(&[2.0], 7, &[0.0]).unwrap();
        assert!((x[0] - 2.0 * d.alpha_bar(7).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn default_reaches_noise() {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            let s = NoiseSchedule::build(20, kind).unwrap();
            assert!(s.alpha_bar(20) < 0.02);
            for t in 1..=20 {
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn clipped_step_matches_when_inactive() {
        let s = NoiseSchedule::build(20, ScheduleKind::Linear).unwrap();
        let x0 = [0.3, -1.2, 2.0];
        let eps = [0.5, -0.7, 1.1];
        let z = [0.2, 0.1, -0.4];
        for t in 1..=20 {
            let xt = s.q_sample(&x0, t, &eps).unwrap();
            let a = s.p_sample_step(&xt, t, &eps, &z).unwrap();
            let b = s.p_sample_step_clipped(&xt, t, &eps, &z, 10.0).unwrap();
            for (a, b) in a.iter().zip(&b) {
                assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "t {t}: {a} vs {b}");
            }
        }
        let xt = s.q_sample(&x0, 20, &eps).unwrap();
        let bad: Vec<f64> = eps.iter().map(|e| e * 0.9).collect();
        let b = s.p_sample_step_clipped(&xt, 20, &bad, &z, 5.0).unwrap();
        assert!(b.iter().all(|v| v.abs() < 5.0));
    }
}
