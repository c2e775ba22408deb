use crate::error::{Error, Result};
use crate::nn::{CategoricalDist, ParamVector, TabularLm, TokenModel};
use crate::oracle::{check_cap, EnumerationInstance};

/// Expected future-coupling term `E[sum_t sum_{t' > t} r_t' g_t]` dropped by
/// the token-level estimator, by exact enumeration.
pub fn bias_gap(student: &TabularLm, teacher: &TabularLm, horizon: usize) -> Result<ParamVector> {
    bias_gap_inner(student, teacher, &[], horizon)
}

pub fn bias_gap_from(inst: &EnumerationInstance) -> Result<ParamVector> {
    bias_gap_inner(&inst.student, &inst.teacher, &inst.prompt, inst.horizon)
}

/// Computed by backward induction over prefixes: with `V(h)` the expected
/// sum of future rewards after history `h`,
/// `E[g_t * sum_{t'>t} r_t'] = sum_h P(h) sum_y pi(y|h) g(y|h) V(h y)`.
fn bias_gap_inner(student: &TabularLm, teacher: &TabularLm, prompt: &[u32], horizon: usize) -> Result<ParamVector> {
    if student.vocab_size() != teacher.vocab_size() {
        return Err(Error::Config("student and teacher vocabularies differ".into()));
    }
    check_cap(student.vocab_size(), horizon)?;
    let mut walk = Walk {
        student,
        teacher,
        pi_rows: student.row_dists(),
        gap: ParamVector::zeros(student.params().layout().clone()),
        horizon,
        prompt_len: prompt.len(),
    };
    let mut history = prompt.to_vec();
    walk.value(&mut history, 1.0)?;
    Ok(walk.gap)
}

struct Walk<'a> {
    student: &'a TabularLm,
    teacher: &'a TabularLm,
    pi_rows: Vec<CategoricalDist>,
    gap: ParamVector,
    horizon: usize,
    prompt_len: usize,
}

impl Walk<'_> {
    fn value(&mut self, history: &mut Vec<u32>, prefix_prob: f64) -> Result<f64> {
        if history.len() - self.prompt_len == self.horizon {
            return Ok(0.0);
        }
        let v = self.student.vocab_size();
        let ctx = self.student.context_index(history);
        let pi = self.pi_rows[ctx].clone();
        let q = self.teacher.next_dist(history);
        let mut value = 0.0;
        for y in 0..v as u32 {
            let p = pi.prob(y);
            if p == 0.0 {
                continue;
            }
            let reward = p.ln() - q.log_prob(y);
            if !reward.is_finite() {
                return Err(Error::Divergence(format!("teacher assigns zero mass to token {y}")));
            }
            let future = if self.student.eos() == Some(y) {
                0.0
            } else {
                history.push(y);
                let f = self.value(history, prefix_prob * p)?;
                history.pop();
                f
            };
            // g(y|ctx) = onehot(y) - pi on the context row
            let w = prefix_prob * p * future;
            if w != 0.0 {
                let row = &mut self.gap.values_mut()[ctx * v..(ctx + 1) * v];
                for (u, g) in row.iter_mut().enumerate() {
                    *g -= w * pi.probs()[u];
                }
                row[y as usize] += w;
            }
            value += p * (reward + future);
        }
        Ok(value)
    }
}
