use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Parameters of the vector-space augmentations. The weak view perturbs
/// lightly; the strong view adds more noise and drops coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub weak_noise_sigma: f64,
    pub strong_noise_sigma: f64,
    pub strong_mask_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            weak_noise_sigma: 0.05,
            strong_noise_sigma: 0.3,
            strong_mask_fraction: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            weak_noise_sigma: 0.0,
            strong_noise_sigma: 0.0,
            strong_mask_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weak_noise_sigma >= 0.0 && self.weak_noise_sigma.is_finite()) {
            return Err(Error::config(
                "augment.weak_noise_sigma",
                "must be finite and >= 0",
            ));
        }
        if !(self.strong_noise_sigma >= self.weak_noise_sigma
            && self.strong_noise_sigma.is_finite())
        {
            return Err(Error::config(
                "augment.strong_noise_sigma",
                "must be finite and >= weak_noise_sigma",
            ));
        }
        if !(0.0..1.0).contains(&self.strong_mask_fraction) {
            return Err(Error::config(
                "augment.strong_mask_fraction",
                "must lie in [0, 1)",
            ));
        }
        Ok(())
    }

    /// Number of coordinates the strong view zeroes out of `dim`.
    pub fn masked_count(&self, dim: usize) -> usize {
        ((self.strong_mask_fraction * dim as f64).round() as usize).min(dim)
    }
}

fn add_noise(features: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return features.to_vec();
    }
    features
        .iter()
        .map(|&x| {
            let z: f64 = rng.sample(StandardNormal);
            x + sigma * z
        })
        .collect()
}

/// Weak view: elementwise Gaussian noise.
pub fn augment_weak(sample: &Sample, cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    add_noise(&sample.features, cfg.weak_noise_sigma, rng)
}

/// Strong view: larger Gaussian noise, then a uniformly chosen subset of
/// coordinates set to zero.
pub fn augment_strong(sample: &Sample, cfg: &AugmentConfig, rng: &mut Rng) -> Vec<f64> {
    let mut out = add_noise(&sample.features, cfg.strong_noise_sigma, rng);
    let masked = cfg.masked_count(out.len());
    if masked > 0 {
        for i in index::sample(rng, out.len(), masked) {
            out[i] = 0.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn sample(dim: usize) -> Sample {
        Sample::labeled((1..=dim).map(|i| i as f64).collect(), 0)
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = sample(8);
        let cfg = AugmentConfig::identity();
        let mut rng = rng_from(0, &[]);
        assert_eq!(augment_weak(&s, &cfg, &mut rng), s.features);
        assert_eq!(augment_strong(&s, &cfg, &mut rng), s.features);
    }

    #[test]
    fn fixed_state_is_reproducible() {
        let s = sample(8);
        let cfg = AugmentConfig::default();
        let a = augment_weak(&s, &cfg, &mut rng_from(4, &[]));
        let b = augment_weak(&s, &cfg, &mut rng_from(4, &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn weak_noise_moment() {
        let s = Sample::labeled(vec![0.0], 0);
        let cfg = AugmentConfig {
            weak_noise_sigma: 0.05,
            ..AugmentConfig::default()
        };
        let mut rng = rng_from(17, &[]);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| augment_weak(&s, &cfg, &mut rng)[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.05).abs() / 0.05 < 0.05, "empirical std {std}");
    }

    #[test]
    fn strong_mask_zeroes_exact_count() {
        let s = sample(16);
        let cfg = AugmentConfig {
            weak_noise_sigma: 0.0,
            strong_noise_sigma: 0.0,
            strong_mask_fraction: 0.25,
        };
        let out = augment_strong(&s, &cfg, &mut rng_from(2, &[]));
        assert_eq!(out.iter().filter(|&&x| x == 0.0).count(), 4);
    }

    #[test]
    fn two_strong_views_differ() {
        let s = sample(16);
        let cfg = AugmentConfig::default();
        let mut rng = rng_from(5, &[]);
        for _ in 0..100 {
            let a = augment_strong(&s, &cfg, &mut rng);
            let b = augment_strong(&s, &cfg, &mut rng);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn validation_orders_sigmas() {
        let bad = AugmentConfig {
            weak_noise_sigma: 0.5,
            strong_noise_sigma: 0.1,
            strong_mask_fraction: 0.0,
        };
        assert!(bad.validate().is_err());
        let bad_mask = AugmentConfig {
            strong_mask_fraction: 1.0,
            ..AugmentConfig::default()
        };
        assert!(bad_mask.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
