//! Output heads: Gaussian actions and categorical tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Gaussian log-density of `x` under `N(mean, std^2)`.
pub fn gaussian_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - LN_SQRT_2PI
}

/// Mean and clamped log standard deviation of a Gaussian action distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianHead {
    pub mean: f64,
    pub log_std: f64,
    /// True when the raw log-std fell outside the clamp interval, which
    /// zeroes its gradient.
    pub clamped: bool,
}

impl GaussianHead {
    pub fn from_raw(mean: f64, raw_log_std: f64, clamp: (f64, f64)) -> Self {
        let log_std = raw_log_std.clamp(clamp.0, clamp.1);
        GaussianHead { mean, log_std, clamped: log_std != raw_log_std }
    }

    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    pub fn log_prob(&self, action: f64) -> f64 {
        gaussian_log_density(action, self.mean, self.std())
    }

    /// Derivatives of `log_prob(action)` with respect to the two raw head
    /// outputs (mean, raw log-std).
    pub fn log_prob_output_grad(&self, action: f64) -> [f64; 2] {
        let var = (2.0 * self.log_std).exp();
        let diff = action - self.mean;
        let d_mean = diff / var;
        let d_log_std = if self.clamped { 0.0 } else { diff * diff / var - 1.0 };
        [d_mean, d_log_std]
    }

    pub fn sample_with_noise(&self, noise: f64) -> f64 {
        self.mean + self.std() * noise
    }
}

/// A distribution over a vocabulary of `V` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDist {
    probs: Vec<f64>,
    logits: Option<Vec<f64>>,
}

impl CategoricalDist {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax(&logits);
        CategoricalDist { probs, logits: Some(logits) }
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("empty distribution".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("probabilities sum to {total}, not 1")));
        }
        Ok(CategoricalDist { probs, logits: None })
    }

    pub fn uniform(vocab: usize) -> Self {
        Self::from_logits(vec![0.0; vocab])
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    pub fn prob(&self, token: u32) -> f64 {
        self.probs[token as usize]
    }

    pub fn log_prob(&self, token: u32) -> f64 {
        self.probs[token as usize].ln()
    }

    pub fn check_token(&self, token: u32) -> Result<()> {
        if (token as usize) < self.probs.len() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange { token, vocab: self.probs.len() })
        }
    }

    /// Rescale by a sampling temperature; `1.0` returns an identical copy.
    pub fn with_temperature(&self, temperature: f64) -> Self {
        if temperature == 1.0 {
            return self.clone();
        }
        match &self.logits {
            Some(l) => Self::from_logits(l.iter().map(|x| x / temperature).collect()),
            None => {
                let logits = self
                    .probs
                    .iter()
                    .map(|p| if *p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
                    .collect();
                Self::from_logits(logits)
            }
        }
    }

    /// Ancestral sampling by inverse CDF in token order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        sample_index(&self.probs, rng) as u32
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Log-probability of `token` and its gradient with respect to the logits,
/// `onehot(token) - probs`.
pub fn categorical_logprob_grad(dist: &CategoricalDist, token: u32) -> Result<(f64, Vec<f64>)> {
    dist.check_token(token)?;
    let mut grad: Vec<f64> = dist.probs.iter().map(|p| -p).collect();
    grad[token as usize] += 1.0;
    Ok((dist.log_prob(token), grad))
}
