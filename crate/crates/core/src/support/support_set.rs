use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::CategoricalDist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportSource {
    TeacherTopk,
    StudentTopk,
    TeacherTopkPlusSampled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportSet {
    token_ids: Vec<u32>,
    source: SupportSource,
}

impl SupportSet {
    /// Explicit support; ids must be distinct and below `vocab`.
    pub fn new(token_ids: Vec<u32>, source: SupportSource, vocab: usize) -> Result<Self> {
        if token_ids.is_empty() {
            return Err(Error::Config("support must not be empty".into()));
        }
        let mut seen = vec![false; vocab];
        for &t in &token_ids {
            let slot = seen.get_mut(t as usize).ok_or(Error::TokenOutOfRange { token: t, vocab })?;
            if *slot {
                return Err(Error::Config(format!("token {t} repeated in support")));
            }
            *slot = true;
        }
        Ok(SupportSet { token_ids, source })
    }

    pub fn full(vocab: usize, source: SupportSource) -> Self {
        SupportSet { token_ids: (0..vocab as u32).collect(), source }
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn source(&self) -> SupportSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn contains(&self, token: u32) -> bool {
        self.token_ids.contains(&token)
    }

    /// Total mass `dist` places on the support.
    pub fn coverage(&self, dist: &CategoricalDist) -> f64 {
        self.token_ids.iter().map(|&t| dist.prob(t)).sum()
    }
}

/// The `k` most probable ids, ties to the lower id.
pub fn top_k_ids(probs: &[f64], k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..probs.len() as u32).collect();
    order.sort_by(|&a, &b| probs[b as usize].total_cmp(&probs[a as usize]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Support of size `k` ranked by the distribution `source` names.
///
/// `sampled` is the token actually drawn at this prefix; only the
/// `TeacherTopkPlusSampled` variant reads it.
pub fn build_support(
    teacher: &CategoricalDist,
    student: &CategoricalDist,
    k: usize,
    source: SupportSource,
    sampled: Option<u32>,
) -> Result<SupportSet> {
    let vocab = teacher.vocab_size();
    if student.vocab_size() != vocab {
        return Err(Error::Dimension { expected: vocab, got: student.vocab_size() });
    }
    if k == 0 || k > vocab {
        return Err(Error::Config(format!("support size K={k} must be in 1..={vocab}")));
    }
    let mut ids = match source {
        SupportSource::StudentTopk => top_k_ids(student.probs(), k),
        _ => top_k_ids(teacher.probs(), k),
    };
    if source == SupportSource::TeacherTopkPlusSampled {
        let y = sampled.ok_or_else(|| Error::Config("plus-sampled support needs the sampled token".into()))?;
        teacher.check_token(y)?;
        if !ids.contains(&y) {
            ids.push(y);
        }
    }
    Ok(SupportSet { token_ids: ids, source })
}

/// A distribution restricted to a support and rescaled to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDistribution {
    support: SupportSet,
    probs: Vec<f64>,
}

impl TruncatedDistribution {
    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

pub fn renormalize(dist: &CategoricalDist, support: &SupportSet) -> Result<TruncatedDistribution> {
    renormalize_floored(dist, support, 0.0)
}

/// [`renormalize`] after raising every in-support mass to at least `floor`.
pub fn renormalize_floored(dist: &CategoricalDist, support: &SupportSet, floor: f64) -> Result<TruncatedDistribution> {
    for &t in support.token_ids() {
        dist.check_token(t)?;
    }
    let raw: Vec<f64> = support.token_ids().iter().map(|&t| dist.prob(t).max(floor)).collect();
    let mass: f64 = raw.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::DegenerateSupport);
    }
    let probs = raw.into_iter().map(|p| p / mass).collect();
    Ok(TruncatedDistribution { support: support.clone(), probs })
}

/// Reverse KL between two distributions renormalized on the same support.
pub fn truncated_rkl(student: &TruncatedDistribution, teacher: &TruncatedDistribution) -> Result<f64> {
    if student.support.token_ids != teacher.support.token_ids {
        return Err(Error::Config("truncated distributions live on different supports".into()));
    }
    let mut total = 0.0;
    for (&p, &q) in student.probs.iter().zip(&teacher.probs) {
        if p == 0.0 {
            continue;
        }
        if q == 0.0 {
            return Err(Error::Divergence("teacher has zero mass inside the support".into()));
        }
        total += p * (p.ln() - q.ln());
    }
    Ok(total.max(0.0))
}
