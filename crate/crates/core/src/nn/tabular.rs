//! Exact small-vocabulary autoregressive models.
//!
//! A [`TabularLm`] of order `k` keeps one logit row per context of the
//! previous `k` tokens, so `V^k` rows of `V` logits. Positions before the
//! start of the sequence read as the BOS token.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::dist::CategoricalDist;
use crate::nn::params::{Layout, ParamVector};
use crate::rng;

/// Anything that yields a next-token distribution given the token history.
pub trait TokenModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Distribution of the token following `history` (prompt included).
    fn next_dist(&self, history: &[u32]) -> CategoricalDist;

    /// Token that terminates generation, if any.
    fn eos(&self) -> Option<u32> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularLm {
    vocab_size: usize,
    order: usize,
    bos: u32,
    eos: Option<u32>,
    logits: ParamVector,
}

impl TabularLm {
    pub fn new(vocab_size: usize, order: usize, bos: u32, eos: Option<u32>, logits: Vec<f64>) -> Result<Self> {
        let rows = context_count(vocab_size, order)?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary must be nonempty".into()));
        }
        for t in std::iter::once(bos).chain(eos) {
            if t as usize >= vocab_size {
                return Err(Error::TokenOutOfRange { token: t, vocab: vocab_size });
            }
        }
        if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::Config("logits must not be NaN or +inf".into()));
        }
        let logits = ParamVector::from_values(Self::layout_for(rows, vocab_size), logits)?;
        Ok(TabularLm { vocab_size, order, bos, eos, logits })
    }

    fn layout_for(rows: usize, vocab: usize) -> Arc<Layout> {
        Layout::new([("logits", vec![rows, vocab])])
    }

    pub fn uniform(vocab_size: usize, order: usize) -> Result<Self> {
        let rows = context_count(vocab_size, order)?;
        Self::new(vocab_size, order, 0, None, vec![0.0; rows * vocab_size])
    }

    /// Logits drawn i.i.d. from `N(0, scale^2)`.
    pub fn random(vocab_size: usize, order: usize, scale: f64, seed: u64) -> Result<Self> {
        let rows = context_count(vocab_size, order)?;
        let mut rng = rng::seeded(seed);
        let logits = (0..rows * vocab_size)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        Self::new(vocab_size, order, 0, None, logits)
    }

    pub fn with_eos(mut self, eos: Option<u32>) -> Result<Self> {
        if let Some(e) = eos {
            if e as usize >= self.vocab_size {
                return Err(Error::TokenOutOfRange { token: e, vocab: self.vocab_size });
            }
        }
        self.eos = eos;
        Ok(self)
    }

    pub fn with_bos(mut self, bos: u32) -> Result<Self> {
        if bos as usize >= self.vocab_size {
            return Err(Error::TokenOutOfRange { token: bos, vocab: self.vocab_size });
        }
        self.bos = bos;
        Ok(self)
    }

    /// Same model with logits divided by `temperature`.
    pub fn sharpened(&self, temperature: f64) -> Self {
        let mut out = self.clone();
        out.logits.values_mut().iter_mut().for_each(|l| *l /= temperature);
        out
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bos(&self) -> u32 {
        self.bos
    }

    pub fn num_contexts(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    pub fn params(&self) -> &ParamVector {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.logits
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if !params.same_layout(&self.logits) {
            return Err(Error::Layout("logit table shape differs".into()));
        }
        self.logits = params;
        Ok(())
    }

    /// Row index of the context formed by the last `order` tokens of `history`.
    pub fn context_index(&self, history: &[u32]) -> usize {
        let mut idx = 0usize;
        for back in (1..=self.order).rev() {
            let tok = if history.len() >= back { history[history.len() - back] } else { self.bos };
            idx = idx * self.vocab_size + tok as usize;
        }
        idx
    }

    pub fn row_logits(&self, context: usize) -> &[f64] {
        &self.logits.values()[context * self.vocab_size..(context + 1) * self.vocab_size]
    }

    pub fn row_logits_mut(&mut self, context: usize) -> &mut [f64] {
        let v = self.vocab_size;
        &mut self.logits.values_mut()[context * v..(context + 1) * v]
    }

    pub fn dist_at(&self, context: usize) -> CategoricalDist {
        CategoricalDist::from_logits(self.row_logits(context).to_vec())
    }

    /// Softmax of every row, indexed by context.
    pub fn row_dists(&self) -> Vec<CategoricalDist> {
        (0..self.num_contexts()).map(|c| self.dist_at(c)).collect()
    }

    /// Log-probability of `tokens` generated after `prompt`.
    pub fn sequence_log_prob(&self, prompt: &[u32], tokens: &[u32]) -> f64 {
        let mut history = prompt.to_vec();
        let mut total = 0.0;
        for &tok in tokens {
            total += self.next_dist(&history).log_prob(tok);
            history.push(tok);
        }
        total
    }
}

impl TokenModel for TabularLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_dist(&self, history: &[u32]) -> CategoricalDist {
        self.dist_at(self.context_index(history))
    }

    fn eos(&self) -> Option<u32> {
        self.eos
    }
}

/// `vocab^order`, rejecting overflow.
pub fn context_count(vocab: usize, order: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..order {
        n = n.checked_mul(vocab).ok_or_else(|| Error::Config(format!("{vocab}^{order} contexts overflow")))?;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_is_a_distribution() {
        let lm = TabularLm::random(4, 2, 2.0, 3).unwrap();
        assert_eq!(lm.num_contexts(), 16);
        for d in lm.row_dists() {
            let s: f64 = d.probs().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn context_index_pads_with_bos() {
        let lm = TabularLm::uniform(3, 2).unwrap().with_bos(1).unwrap();
        assert_eq!(lm.context_index(&[]), 1 * 3 + 1);
        assert_eq!(lm.context_index(&[2]), 1 * 3 + 2);
        assert_eq!(lm.context_index(&[0, 2, 1]), 2 * 3 + 1);
    }

    #[test]
    fn order_zero_has_single_row() {
        let lm = TabularLm::random(5, 0, 1.0, 1).unwrap();
        assert_eq!(lm.num_contexts(), 1);
        assert_eq!(lm.context_index(&[1, 2, 3]), 0);
    }

    #[test]
    fn rejects_bad_special_tokens() {
        assert!(TabularLm::uniform(3, 1).unwrap().with_eos(Some(3)).is_err());
        assert!(TabularLm::new(3, 1, 5, None, vec![0.0; 9]).is_err());
    }

    #[test]
    fn sequence_log_prob_factorizes() {
        let lm = TabularLm::random(3, 1, 1.0, 11).unwrap();
        let lp = lm.sequence_log_prob(&[], &[2, 0, 1]);
        let manual = lm.dist_at(0).log_prob(2) + lm.dist_at(2).log_prob(0) + lm.dist_at(0).log_prob(1);
        assert!((lp - manual).abs() < 1e-14);
    }
}
