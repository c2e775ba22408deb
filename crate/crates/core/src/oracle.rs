//! Exact brute-force enumeration over tabular student/teacher pairs.
//!
//! Sequences are visited depth-first in lexicographic token order. A
//! sequence ends at the horizon or right after the student's EOS token.
//! Scalar accumulators use Neumaier summation so results do not depend on
//! anything but the visiting order.

use crate::error::{Error, Result};
use crate::estimators::{score_tabular, Estimator};
use crate::nn::{CategoricalDist, ParamVector, TabularLm, TokenModel};

/// Largest number of length-`T` sequences an instance may span.
pub const ENUMERATION_CAP: u64 = 2_000_000;

/// Reject instances with `V^T > ENUMERATION_CAP`.
pub fn check_cap(vocab: usize, horizon: usize) -> Result<()> {
    let mut n: u64 = 1;
    for _ in 0..horizon {
        n = n.saturating_mul(vocab as u64);
        if n > ENUMERATION_CAP {
            return Err(Error::SizeCap { requested: format!("{vocab}^{horizon}"), cap: ENUMERATION_CAP });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EnumerationInstance {
    pub student: TabularLm,
    pub teacher: TabularLm,
    pub horizon: usize,
    pub prompt: Vec<u32>,
}

impl EnumerationInstance {
    pub fn new(student: TabularLm, teacher: TabularLm, horizon: usize) -> Result<Self> {
        Self::with_prompt(student, teacher, horizon, Vec::new())
    }

    pub fn with_prompt(student: TabularLm, teacher: TabularLm, horizon: usize, prompt: Vec<u32>) -> Result<Self> {
        if student.vocab_size() != teacher.vocab_size() {
            return Err(Error::Config("student and teacher vocabularies differ".into()));
        }
        if let Some(&bad) = prompt.iter().find(|t| **t as usize >= student.vocab_size()) {
            return Err(Error::TokenOutOfRange { token: bad, vocab: student.vocab_size() });
        }
        check_cap(student.vocab_size(), horizon)?;
        Ok(EnumerationInstance { student, teacher, horizon, prompt })
    }

    /// Random student and teacher logit tables with a shared shape.
    pub fn random(vocab: usize, order: usize, horizon: usize, scale: f64, seed: u64) -> Result<Self> {
        let student = TabularLm::random(vocab, order, scale, seed.wrapping_mul(2).wrapping_add(1))?;
        let teacher = TabularLm::random(vocab, order, scale, seed.wrapping_mul(2).wrapping_add(2))?;
        Self::new(student, teacher, horizon)
    }

    pub fn with_student(&self, student: TabularLm) -> Result<Self> {
        Self::with_prompt(student, self.teacher.clone(), self.horizon, self.prompt.clone())
    }

    /// Call `f(tokens, log pi(y), log q(y))` for every sequence with
    /// nonzero student probability, in lexicographic order.
    pub fn for_each_sequence(&self, mut f: impl FnMut(&[u32], f64, f64) -> Result<()>) -> Result<()> {
        let pi_rows = self.student.row_dists();
        let mut history = self.prompt.clone();
        self.walk(&pi_rows, &mut history, 0.0, 0.0, &mut f)
    }

    fn walk(
        &self,
        pi_rows: &[CategoricalDist],
        history: &mut Vec<u32>,
        log_pi: f64,
        log_q: f64,
        f: &mut impl FnMut(&[u32], f64, f64) -> Result<()>,
    ) -> Result<()> {
        let depth = history.len() - self.prompt.len();
        if depth == self.horizon {
            return f(&history[self.prompt.len()..], log_pi, log_q);
        }
        let pi = &pi_rows[self.student.context_index(history)];
        let q = self.teacher.next_dist(history);
        for y in 0..self.student.vocab_size() as u32 {
            if pi.prob(y) == 0.0 {
                continue;
            }
            let lp = log_pi + pi.log_prob(y);
            let lq = log_q + q.log_prob(y);
            history.push(y);
            if self.student.eos() == Some(y) {
                f(&history[self.prompt.len()..], lp, lq)?;
            } else {
                self.walk(pi_rows, history, lp, lq, f)?;
            }
            history.pop();
        }
        Ok(())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn divergence_check(log_q: f64) -> Result<()> {
    if log_q == f64::NEG_INFINITY {
        Err(Error::Divergence("teacher assigns zero probability to a student sequence".into()))
    } else {
        Ok(())
    }
}

/// `sum_y pi(y) log(pi(y)/q(y))` over complete sequences.
pub fn exact_sequence_kl(inst: &EnumerationInstance) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    inst.for_each_sequence(|_, lp, lq| {
        divergence_check(lq)?;
        acc.add(lp.exp() * (lp - lq));
        Ok(())
    })?;
    Ok(acc.value())
}

/// Same divergence via the chain rule: visitation-weighted per-step KL,
/// summed over all proper prefixes.
pub fn exact_sequence_kl_chain(inst: &EnumerationInstance) -> Result<f64> {
    fn recurse(inst: &EnumerationInstance, history: &mut Vec<u32>, prob: f64, acc: &mut CompensatedSum) -> Result<()> {
        if history.len() - inst.prompt.len() == inst.horizon {
            return Ok(());
        }
        let pi = inst.student.next_dist(history);
        let q = inst.teacher.next_dist(history);
        let mut local = 0.0;
        for y in 0..pi.vocab_size() as u32 {
            let p = pi.prob(y);
            if p > 0.0 {
                divergence_check(q.log_prob(y))?;
                local += p * (p.ln() - q.log_prob(y));
            }
        }
        acc.add(prob * local);
        for y in 0..pi.vocab_size() as u32 {
            let p = pi.prob(y);
            if p == 0.0 || inst.student.eos() == Some(y) {
                continue;
            }
            history.push(y);
            recurse(inst, history, prob * p, acc)?;
            history.pop();
        }
        Ok(())
    }
    let mut acc = CompensatedSum::default();
    let mut history = inst.prompt.clone();
    recurse(inst, &mut history, 1.0, &mut acc)?;
    Ok(acc.value())
}

/// `sum_y pi(y) (log pi(y) - log q(y)) grad log pi(y)` wrt the student logits.
pub fn exact_kl_gradient(inst: &EnumerationInstance) -> Result<ParamVector> {
    let student = &inst.student;
    let v = student.vocab_size();
    let rows = student.row_dists();
    let mut grad = ParamVector::zeros(student.params().layout().clone());
    inst.for_each_sequence(|tokens, lp, lq| {
        divergence_check(lq)?;
        let w = lp.exp() * (lp - lq);
        let mut history = inst.prompt.clone();
        for &y in tokens {
            let ctx = student.context_index(&history);
            let row = &mut grad.values_mut()[ctx * v..(ctx + 1) * v];
            for (g, p) in row.iter_mut().zip(rows[ctx].probs()) {
                *g -= w * p;
            }
            row[y as usize] += w;
            history.push(y);
        }
        Ok(())
    })?;
    Ok(grad)
}

/// Exact expectation of an estimator under the student's sequence law.
pub fn exact_estimator_expectation(inst: &EnumerationInstance, estimator: Estimator) -> Result<ParamVector> {
    estimator.validate()?;
    let mut acc = ParamVector::zeros(inst.student.params().layout().clone());
    inst.for_each_sequence(|tokens, lp, lq| {
        divergence_check(lq)?;
        let traj = score_tabular(&inst.student, &inst.teacher, &inst.prompt, tokens)?;
        acc.add_scaled(&estimator.estimate(&traj)?, lp.exp())
    })?;
    Ok(acc)
}

/// `E[r_{t'} g_t]` for 1-based positions; zero wherever a step is absent.
pub fn cross_term(inst: &EnumerationInstance, reward_pos: usize, score_pos: usize) -> Result<ParamVector> {
    let mut acc = ParamVector::zeros(inst.student.params().layout().clone());
    inst.for_each_sequence(|tokens, lp, lq| {
        divergence_check(lq)?;
        if reward_pos > tokens.len() || score_pos > tokens.len() {
            return Ok(());
        }
        let traj = score_tabular(&inst.student, &inst.teacher, &inst.prompt, tokens)?;
        let steps = traj.steps();
        acc.add_scaled(&steps[score_pos - 1].score_grad, lp.exp() * steps[reward_pos - 1].reward)
    })?;
    Ok(acc)
}

/// Central finite differences of [`exact_sequence_kl`] wrt every student logit.
pub fn finite_difference_kl_gradient(inst: &EnumerationInstance, step: f64) -> Result<ParamVector> {
    let base = inst.student.params().clone();
    let mut out = ParamVector::zeros(base.layout().clone());
    for i in 0..base.len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut s = inst.student.clone();
            s.params_mut().values_mut()[i] += delta;
            exact_sequence_kl(&inst.with_student(s)?)
        };
        out.values_mut()[i] = (eval(step)? - eval(-step)?) / (2.0 * step);
    }
    Ok(out)
}
