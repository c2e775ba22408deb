use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::support_set::top_k_ids;
use crate::error::{Error, Result};
use crate::nn::dist::sample_index;
use crate::nn::{CategoricalDist, TokenModel};
use crate::rng;

/// Smallest descending-probability prefix whose mass reaches `p`,
/// returned as `(ids, renormalized probs)`.
pub fn nucleus(dist: &CategoricalDist, p: f64) -> Result<(Vec<u32>, Vec<f64>)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("top_p must lie in (0, 1], got {p}")));
    }
    let order = top_k_ids(dist.probs(), dist.vocab_size());
    let mut ids = Vec::new();
    let mut mass = 0.0;
    for t in order {
        let q = dist.prob(t);
        if q == 0.0 && !ids.is_empty() {
            break;
        }
        ids.push(t);
        mass += q;
        if p < 1.0 && mass >= p {
            break;
        }
    }
    let probs = ids.iter().map(|&t| dist.prob(t) / mass).collect();
    Ok((ids, probs))
}

/// Draw one token from the top-`p` nucleus of `dist`.
pub fn top_p_sample<R: Rng + ?Sized>(dist: &CategoricalDist, p: f64, rng: &mut R) -> Result<u32> {
    if p == 1.0 {
        return Ok(dist.sample(rng));
    }
    let (ids, probs) = nucleus(dist, p)?;
    Ok(ids[sample_index(&probs, rng)])
}

/// Token ids whose positions are dropped from the loss.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskSet(Vec<u32>);

impl MaskSet {
    pub fn new(mut ids: Vec<u32>, vocab: usize) -> Result<Self> {
        if let Some(&t) = ids.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::TokenOutOfRange { token: t, vocab });
        }
        ids.sort_unstable();
        ids.dedup();
        Ok(MaskSet(ids))
    }

    pub fn empty() -> Self {
        MaskSet(Vec::new())
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn contains(&self, token: u32) -> bool {
        self.0.binary_search(&token).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= vocab) {
            Some(&t) => Err(Error::TokenOutOfRange { token: t, vocab }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub group_size: usize,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "one")]
    pub top_p: f64,
    pub max_length: usize,
    #[serde(default)]
    pub mask: MaskSet,
}

fn one() -> f64 {
    1.0
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig { group_size: 8, temperature: 1.0, top_p: 1.0, max_length: 16, mask: MaskSet::empty() }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::Config("group_size must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be at least 1".into()));
        }
        Ok(())
    }
}

/// One sampled continuation of `max_length` tokens or fewer, ending at EOS.
pub fn sample_rollout<M: TokenModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prompt: &[u32],
    cfg: &RolloutConfig,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let mut history = prompt.to_vec();
    let mut out = Vec::with_capacity(cfg.max_length);
    for _ in 0..cfg.max_length {
        let dist = model.next_dist(&history).with_temperature(cfg.temperature);
        let tok = top_p_sample(&dist, cfg.top_p, rng)?;
        out.push(tok);
        history.push(tok);
        if model.eos() == Some(tok) {
            break;
        }
    }
    Ok(out)
}

/// A group of `G` rollouts; rollout `i` uses its own stream `(seed, step, i)`.
pub fn sample_group<M: TokenModel + ?Sized>(
    model: &M,
    prompt: &[u32],
    cfg: &RolloutConfig,
    seed: u64,
    step: u64,
) -> Result<Vec<Vec<u32>>> {
    cfg.validate()?;
    (0..cfg.group_size as u64)
        .into_par_iter()
        .map(|i| sample_rollout(model, prompt, cfg, &mut rng::stream(seed, &[0x5A3F, step, i])))
        .collect()
}
