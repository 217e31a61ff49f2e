//! Vector-space weak/strong views.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Augmentation strengths relative to the dataset's feature standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub weak_noise: f64,
    pub strong_noise: f64,
    pub drop_prob: f64,
    pub scale_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            weak_noise: 0.05,
            strong_noise: 0.15,
            drop_prob: 0.1,
            scale_jitter: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weak_noise >= 0.0) {
            return Err(Error::config("augment.weak_noise", "must be non-negative"));
        }
        if !(self.strong_noise >= 0.0) {
            return Err(Error::config("augment.strong_noise", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::config("augment.drop_prob", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.scale_jitter) {
            return Err(Error::config("augment.scale_jitter", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Absolute augmentation parameters for one dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmenter {
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub drop_prob: f64,
    pub scale_jitter: f64,
}

impl Augmenter {
    pub fn new(cfg: &AugmentConfig, feature_std: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Augmenter {
            sigma_weak: cfg.weak_noise * feature_std,
            sigma_strong: cfg.strong_noise * feature_std,
            drop_prob: cfg.drop_prob,
            scale_jitter: cfg.scale_jitter,
        })
    }

    /// Every augmentation switched off.
    pub fn identity() -> Self {
        Augmenter {
            sigma_weak: 0.0,
            sigma_strong: 0.0,
            drop_prob: 0.0,
            scale_jitter: 0.0,
        }
    }

    /// `x + N(0, σ_weak²)`
    pub fn augment_weak<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        x.iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + self.sigma_weak * z
            })
            .collect()
    }

    /// Gaussian noise, then coordinate dropout, then per-coordinate scaling
    /// in `[1 − s, 1 + s]`.
    pub fn augment_strong<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        x.iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                let noisy = v + self.sigma_strong * z;
                let keep = rng.random::<f64>() >= self.drop_prob;
                let scale = 1.0 + self.scale_jitter * (2.0 * rng.random::<f64>() - 1.0);
                if keep {
                    noisy * scale
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn pair<R: Rng + ?Sized>(&self, x: &[f64], origin: usize, rng: &mut R) -> AugmentedPair {
        AugmentedPair {
            weak: self.augment_weak(x, rng),
            strong: self.augment_strong(x, rng),
            origin,
        }
    }
}

/// Weak and strong views of one target sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub weak: Vec<f64>,
    pub strong: Vec<f64>,
    pub origin: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::stream_rng;

    fn aug(weak: f64, strong: f64, drop: f64, jitter: f64) -> Augmenter {
        Augmenter {
            sigma_weak: weak,
            sigma_strong: strong,
            drop_prob: drop,
            scale_jitter: jitter,
        }
    }

    #[test]
    fn disabled_augmentations_are_identity() {
        let mut rng = stream_rng(0, 0);
        let x = [0.5, -1.0, 2.0];
        let a = Augmenter::identity();
        assert_eq!(a.augment_weak(&x, &mut rng), x.to_vec());
        assert_eq!(a.augment_strong(&x, &mut rng), x.to_vec());
    }

    #[test]
    fn full_dropout_zeroes_everything() {
        let mut rng = stream_rng(0, 0);
        let out = aug(0.1, 0.3, 1.0, 0.2).augment_strong(&[1.0, 2.0, 3.0, 4.0], &mut rng);
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn weak_noise_variance() {
        let mut rng = stream_rng(1, 0);
        let (d, sigma) = (8, 0.3);
        let a = aug(sigma, 0.0, 0.0, 0.0);
        let x = vec![1.0; d];
        let n = 10_000;
        let mean_sq: f64 = (0..n)
            .map(|_| {
                let y = a.augment_weak(&x, &mut rng);
                y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        let expect = d as f64 * sigma * sigma;
        assert!((mean_sq - expect).abs() / expect < 0.05, "{mean_sq} vs {expect}");
    }

    #[test]
    fn strong_distorts_more_than_weak() {
        let mut rng = stream_rng(2, 0);
        let a = Augmenter::new(&AugmentConfig::default(), 1.0).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let dist = |y: Vec<f64>| y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let (mut weak, mut strong) = (0.0, 0.0);
        for _ in 0..10_000 {
            weak += dist(a.augment_weak(&x, &mut rng));
            strong += dist(a.augment_strong(&x, &mut rng));
        }
        assert!(strong > weak);
    }

    #[test]
    fn deterministic_given_rng_state() {
        let a = Augmenter::new(&AugmentConfig::default(), 0.7).unwrap();
        let x = [0.1, 0.2, 0.3];
        let p1 = a.pair(&x, 4, &mut stream_rng(3, 9));
        let p2 = a.pair(&x, 4, &mut stream_rng(3, 9));
        assert_eq!(p1, p2);
        assert_eq!(p1.weak.len(), 3);
        assert_eq!(p1.strong.len(), 3);
    }

    #[test]
    fn config_validation() {
        let bad = AugmentConfig {
            drop_prob: 1.5,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
