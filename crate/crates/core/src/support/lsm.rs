use serde::{Deserialize, Serialize};

use super::objective::TEACHER_FLOOR;
use super::sampling::MaskSet;
use super::support_set::{build_support, renormalize, renormalize_floored, truncated_rkl, SupportSource};
use crate::error::{Error, Result};
use crate::nn::{ParamVector, TabularLm, TokenModel};

/// Which per-position objective drives a token-level update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Sampled,
    LsmTeacherTopk,
    LsmStudentTopk,
    LsmTopkPlusSampled,
}

impl Objective {
    pub fn support_source(self) -> Option<SupportSource> {
        match self {
            Objective::Sampled => None,
            Objective::LsmTeacherTopk => Some(SupportSource::TeacherTopk),
            Objective::LsmStudentTopk => Some(SupportSource::StudentTopk),
            Objective::LsmTopkPlusSampled => Some(SupportSource::TeacherTopkPlusSampled),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Sampled => "sampled",
            Objective::LsmTeacherTopk => "lsm_teacher_topk",
            Objective::LsmStudentTopk => "lsm_student_topk",
            Objective::LsmTopkPlusSampled => "lsm_topk_plus_sampled",
        }
    }
}

/// Denominator of the group-averaged loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Total generated length, masked positions included.
    #[default]
    AllPositions,
    /// Only positions that survive the mask.
    UnmaskedPositions,
}

/// Zero every term whose sampled token is masked.
pub fn apply_mask(terms: &[f64], tokens: &[u32], mask: &MaskSet) -> Vec<f64> {
    terms.iter().zip(tokens).map(|(&x, &t)| if mask.contains(t) { 0.0 } else { x }).collect()
}

fn normalizer_count(rollouts: &[Vec<u32>], mask: &MaskSet, normalizer: Normalizer) -> usize {
    rollouts.iter().flatten().filter(|&&t| normalizer == Normalizer::AllPositions || !mask.contains(t)).count()
}

fn check_rollouts(rollouts: &[Vec<u32>], vocab: usize) -> Result<()> {
    if rollouts.is_empty() || rollouts.iter().all(Vec::is_empty) {
        return Err(Error::Config("no rollout tokens to score".into()));
    }
    if let Some(&t) = rollouts.iter().flatten().find(|&&t| t as usize >= vocab) {
        return Err(Error::TokenOutOfRange { token: t, vocab });
    }
    Ok(())
}

/// Per-position terms in rollout order, before masking.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionTerm {
    pub rollout: usize,
    pub position: usize,
    pub token: u32,
    pub loss: f64,
}

/// Group-averaged truncated reverse KL and its gradient over the student's logits.
///
/// Rollouts are held fixed: the gradient is that of the local losses at the
/// visited prefixes. With `k == V` this is the average full-vocabulary
/// reverse KL over positions.
#[allow(clippy::too_many_arguments)]
pub fn lsm_loss<M: TokenModel + ?Sized>(
    rollouts: &[Vec<u32>],
    prompt: &[u32],
    student: &TabularLm,
    teacher: &M,
    k: usize,
    mask: &MaskSet,
    source: SupportSource,
    normalizer: Normalizer,
) -> Result<(f64, ParamVector)> {
    let (terms, grad, denom) = lsm_terms(rollouts, prompt, student, teacher, k, mask, source, normalizer)?;
    let total: f64 = terms.iter().filter(|t| !mask.contains(t.token)).map(|t| t.loss).sum();
    Ok((total / denom, grad))
}

#[allow(clippy::too_many_arguments)]
fn lsm_terms<M: TokenModel + ?Sized>(
    rollouts: &[Vec<u32>],
    prompt: &[u32],
    student: &TabularLm,
    teacher: &M,
    k: usize,
    mask: &MaskSet,
    source: SupportSource,
    normalizer: Normalizer,
) -> Result<(Vec<PositionTerm>, ParamVector, f64)> {
    let vocab = student.vocab_size();
    if teacher.vocab_size() != vocab {
        return Err(Error::Dimension { expected: vocab, got: teacher.vocab_size() });
    }
    check_rollouts(rollouts, vocab)?;
    mask.validate(vocab)?;
    let denom = normalizer_count(rollouts, mask, normalizer);
    let mut grad = ParamVector::zeros(student.params().layout().clone());
    let mut terms = Vec::new();
    if denom == 0 {
        return Ok((terms, grad, 1.0));
    }
    let scale = 1.0 / denom as f64;
    for (i, tokens) in rollouts.iter().enumerate() {
        let mut history = prompt.to_vec();
        for (pos, &tok) in tokens.iter().enumerate() {
            let ctx = student.context_index(&history);
            let pi = student.dist_at(ctx);
            let q = teacher.next_dist(&history);
            let support = build_support(&q, &pi, k, source, Some(tok))?;
            let pi_hat = renormalize(&pi, &support)?;
            let q_hat = renormalize_floored(&q, &support, TEACHER_FLOOR)?;
            let loss = truncated_rkl(&pi_hat, &q_hat)?;
            if !mask.contains(tok) {
                let row = &mut grad.values_mut()[ctx * vocab..(ctx + 1) * vocab];
                for ((&v, &p), &qv) in support.token_ids().iter().zip(pi_hat.probs()).zip(q_hat.probs()) {
                    if p > 0.0 {
                        row[v as usize] += scale * p * (p.ln() - qv.ln() - loss);
                    }
                }
            }
            terms.push(PositionTerm { rollout: i, position: pos + 1, token: tok, loss });
            history.push(tok);
        }
    }
    Ok((terms, grad, denom as f64))
}

/// Sampled-token objective: mean of `ln pi(y) - ln q(y)` (teacher floored) with the
/// score-function gradient `sum r_t grad ln pi(y_t)` over the same normalizer.
pub fn sampled_token_objective<M: TokenModel + ?Sized>(
    rollouts: &[Vec<u32>],
    prompt: &[u32],
    student: &TabularLm,
    teacher: &M,
    mask: &MaskSet,
    normalizer: Normalizer,
) -> Result<(f64, ParamVector)> {
    let vocab = student.vocab_size();
    if teacher.vocab_size() != vocab {
        return Err(Error::Dimension { expected: vocab, got: teacher.vocab_size() });
    }
    check_rollouts(rollouts, vocab)?;
    mask.validate(vocab)?;
    let denom = normalizer_count(rollouts, mask, normalizer);
    let mut grad = ParamVector::zeros(student.params().layout().clone());
    if denom == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / denom as f64;
    let mut total = 0.0;
    for tokens in rollouts {
        let mut history = prompt.to_vec();
        for &tok in tokens {
            if !mask.contains(tok) {
                let ctx = student.context_index(&history);
                let pi = student.dist_at(ctx);
                let q = teacher.next_dist(&history);
                let r = pi.log_prob(tok) - q.prob(tok).max(TEACHER_FLOOR).ln();
                total += r;
                let row = &mut grad.values_mut()[ctx * vocab..(ctx + 1) * vocab];
                for (v, p) in pi.probs().iter().enumerate() {
                    let onehot = if v == tok as usize { 1.0 } else { 0.0 };
                    row[v] += scale * r * (onehot - p);
                }
            }
            history.push(tok);
        }
    }
    Ok((total * scale, grad))
}

/// Loss settings shared by every objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub objective: Objective,
    pub k: usize,
    #[serde(default)]
    pub mask: MaskSet,
    #[serde(default)]
    pub normalizer: Normalizer,
}

impl LossConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.objective != Objective::Sampled && (self.k == 0 || self.k > vocab) {
            return Err(Error::Config(format!("support size K={} must be in 1..={vocab}", self.k)));
        }
        self.mask.validate(vocab)
    }

    pub fn evaluate<M: TokenModel + ?Sized>(
        &self,
        rollouts: &[Vec<u32>],
        prompt: &[u32],
        student: &TabularLm,
        teacher: &M,
    ) -> Result<(f64, ParamVector)> {
        match self.objective.support_source() {
            None => sampled_token_objective(rollouts, prompt, student, teacher, &self.mask, self.normalizer),
            Some(source) => lsm_loss(rollouts, prompt, student, teacher, self.k, &self.mask, source, self.normalizer),
        }
    }
}

/// Unmasked per-position truncated reverse-KL values, for diagnostics.
pub fn lsm_position_terms<M: TokenModel + ?Sized>(
    rollouts: &[Vec<u32>],
    prompt: &[u32],
    student: &TabularLm,
    teacher: &M,
    k: usize,
    source: SupportSource,
) -> Result<Vec<PositionTerm>> {
    let empty = MaskSet::empty();
    Ok(lsm_terms(rollouts, prompt, student, teacher, k, &empty, source, Normalizer::AllPositions)?.0)
}
