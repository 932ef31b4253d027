//! DDPM forward process and a DDIM sampler.
//!
//! Timesteps are 1-based: `t = 1` is the least noisy step and `t = T` the
//! most noisy.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Denoiser;
use crate::params::ParameterVector;
use crate::rng;

/// Variance schedule `beta_1..beta_T` and cumulative products `alpha_bar_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linearly spaced betas, endpoints inclusive.
pub fn make_schedule(num_timesteps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if num_timesteps < 2 {
        return Err(Error::Argument(format!(
            "schedule needs at least 2 timesteps, got {num_timesteps}"
        )));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Argument(format!(
            "betas must satisfy 0 < start <= end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let last = (num_timesteps - 1) as f64;
    let betas = (0..num_timesteps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / last)
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::Argument("schedule needs at least 2 timesteps".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Argument(format!("beta {b} outside (0, 1)")));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn num_timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_timesteps() {
            return Err(Error::Range {
                what: "timestep",
                value: t,
                min: 1,
                max: self.num_timesteps(),
            });
        }
        Ok(())
    }

    /// `alpha_bar_t` for 1-based `t`; `t = 0` yields 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_timestep(t)?;
        if x0.len() != eps.len() {
            return Err(Error::shape("q_sample noise", x0.len(), eps.len()));
        }
        let ab = self.alpha_bar(t);
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| signal * x + noise * e).collect())
    }

    /// SHA-256 over `T` and the beta table, as stored in checkpoint headers.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.num_timesteps() as u64).to_le_bytes());
        for b in &self.betas {
            hasher.update(b.to_le_bytes());
        }
        hasher.finalize().into()
    }
}

/// `n` evenly spaced integers covering `[1, T]`, both ends included.
///
/// A single point sits at the middle of the trajectory.
pub fn evenly_spaced_timesteps(n: usize, num_timesteps: usize) -> Result<Vec<usize>> {
    if n == 0 || n > num_timesteps {
        return Err(Error::Range {
            what: "timestep count",
            value: n,
            min: 1,
            max: num_timesteps,
        });
    }
    if n == 1 {
        return Ok(vec![(1 + num_timesteps) / 2]);
    }
    let span = (num_timesteps - 1) as f64;
    Ok((0..n)
        .map(|j| 1 + (j as f64 * span / (n - 1) as f64).round() as usize)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub inference_steps: usize,
    /// 0 is fully deterministic DDIM; 1 matches DDPM ancestral noise.
    #[serde(default)]
    pub eta: f64,
    pub seed: u64,
}

impl SamplerConfig {
    fn grid(&self, num_timesteps: usize) -> Result<Vec<usize>> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Argument(format!("eta {} outside [0, 1]", self.eta)));
        }
        if self.inference_steps == 1 {
            return Ok(vec![num_timesteps]);
        }
        evenly_spaced_timesteps(self.inference_steps, num_timesteps)
    }
}

/// Runs the DDIM reverse process from seeded Gaussian noise.
pub fn generate(
    model: &Denoiser,
    params: &ParameterVector,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Vec<f64>> {
    let grid = cfg.grid(schedule.num_timesteps())?;
    let dim = model.spec().input_dim;
    let mut rng = rng::seeded(cfg.seed);
    let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    for j in (0..grid.len()).rev() {
        let t = grid[j];
        let t_prev = if j == 0 { 0 } else { grid[j - 1] };
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t_prev);
        let eps = model.forward(params, &x, t)?;
        let sigma = cfg.eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        for (xi, ei) in x.iter_mut().zip(&eps) {
            let x0_pred = (*xi - (1.0 - ab).sqrt() * ei) / ab.sqrt();
            *xi = ab_prev.sqrt() * x0_pred + dir * ei;
        }
        if sigma > 0.0 {
            for xi in &mut x {
                let z: f64 = rng.sample(StandardNormal);
                *xi += sigma * z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                segment: format!("sampler state at timestep {t}"),
            });
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DenoiserSpec;

    #[test]
    fn default_schedule_endpoints() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        assert!(s.alpha_bar(1) > 0.99);
        assert!(s.alpha_bar(1000) < 0.05);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        for t in 2..=1000 {
            let expect = s.alpha_bar(t - 1) * (1.0 - s.betas()[t - 1]);
            assert_eq!(s.alpha_bar(t), expect);
        }
    }

    #[test]
    fn two_step_schedule_products() {
        let s = make_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn schedule_argument_errors() {
        assert!(make_schedule(1, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.03, 0.02).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn q_sample_hand_values() {
        let s = make_schedule(2, 0.5, 0.5).unwrap();
        // alpha_bar_2 = 0.25
        let out = s.q_sample(&[1.0, 0.0], 2, &[0.0, 1.0]).unwrap();
        assert_eq!(out, vec![0.5, 0.75f64.sqrt()]);
        let zero_noise = s.q_sample(&[2.0, -4.0], 1, &[0.0, 0.0]).unwrap();
        assert_eq!(zero_noise, vec![2.0 * 0.5f64.sqrt(), -4.0 * 0.5f64.sqrt()]);
        assert!(matches!(s.q_sample(&[1.0], 3, &[1.0]), Err(Error::Range { .. })));
        assert!(matches!(s.q_sample(&[1.0], 0, &[1.0]), Err(Error::Range { .. })));
    }

    #[test]
    fn evenly_spaced_covers_both_ends() {
        let s = evenly_spaced_timesteps(50, 1000).unwrap();
        assert_eq!(s.len(), 50);
        assert_eq!((s[0], s[49]), (1, 1000));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(evenly_spaced_timesteps(1000, 1000).unwrap(), (1..=1000).collect::<Vec<_>>());
        assert_eq!(evenly_spaced_timesteps(1, 1000).unwrap(), vec![500]);
        assert!(evenly_spaced_timesteps(0, 10).is_err());
        assert!(evenly_spaced_timesteps(11, 10).is_err());
    }

    #[test]
    fn digest_tracks_betas() {
        let a = make_schedule(100, 1e-4, 0.02).unwrap();
        let b = make_schedule(100, 1e-4, 0.021).unwrap();
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn sampler_is_deterministic_and_shaped() {
        let model = Denoiser::new(DenoiserSpec {
            input_dim: 3,
            hidden_dims: vec![16],
            time_embed_dim: 4,
            activation: Default::default(),
        })
        .unwrap();
        let params = model.init(11);
        let schedule = make_schedule(1000, 1e-4, 0.02).unwrap();
        let cfg = SamplerConfig {
            inference_steps: 50,
            eta: 0.0,
            seed: 5,
        };
        let a = generate(&model, &params, &schedule, &cfg).unwrap();
        let b = generate(&model, &params, &schedule, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|v| v.is_finite()));
        let stochastic = SamplerConfig { eta: 1.0, ..cfg };
        let c = generate(&model, &params, &schedule, &stochastic).unwrap();
        assert_ne!(a, c);
    }
}
