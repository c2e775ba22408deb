use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{categorical_logprob_grad, ParamVector, TabularLm, TokenModel};

/// One decoding step: reward term `r_t = log pi(y_t|c_t) - log q(y_t|c_t)`
/// and score gradient `g_t = grad log pi(y_t|c_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub reward: f64,
    pub score_grad: ParamVector,
    pub student_logprob: f64,
    pub teacher_logprob: f64,
    /// 1-based position within the trajectory.
    pub position: usize,
}

impl StepRecord {
    pub fn new(student_logprob: f64, teacher_logprob: f64, score_grad: ParamVector, position: usize) -> Self {
        StepRecord { reward: student_logprob - teacher_logprob, score_grad, student_logprob, teacher_logprob, position }
    }

    /// A record with a prescribed reward, for synthetic constructions where no
    /// densities exist.
    pub fn synthetic(reward: f64, score_grad: ParamVector, position: usize) -> Self {
        StepRecord { reward, score_grad, student_logprob: reward, teacher_logprob: 0.0, position }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<StepRecord>,
    pub task: u32,
}

impl Trajectory {
    pub fn new(steps: Vec<StepRecord>, task: u32) -> Result<Self> {
        for (i, s) in steps.iter().enumerate() {
            if s.position != i + 1 {
                return Err(Error::Config(format!(
                    "step {} carries position {}; positions must run 1..T",
                    i + 1,
                    s.position
                )));
            }
        }
        if let Some(first) = steps.first() {
            if steps.iter().any(|s| !s.score_grad.same_layout(&first.score_grad)) {
                return Err(Error::Layout("score gradients differ in layout".into()));
            }
        }
        Ok(Trajectory { steps, task })
    }

    /// Build from `(reward, score)` pairs, mostly for hand-written examples.
    pub fn from_parts(parts: impl IntoIterator<Item = (f64, Vec<f64>)>) -> Result<Self> {
        let steps = parts
            .into_iter()
            .enumerate()
            .map(|(i, (r, g))| StepRecord::synthetic(r, ParamVector::flat(g), i + 1))
            .collect();
        Self::new(steps, 0)
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Score a token sequence under a tabular student/teacher pair, with score
/// gradients taken wrt the student's logit table.
pub fn score_tabular(student: &TabularLm, teacher: &TabularLm, prompt: &[u32], tokens: &[u32]) -> Result<Trajectory> {
    let mut history = prompt.to_vec();
    let mut steps = Vec::with_capacity(tokens.len());
    let v = student.vocab_size();
    for (i, &tok) in tokens.iter().enumerate() {
        let ctx = student.context_index(&history);
        let pi = student.dist_at(ctx);
        let q = teacher.next_dist(&history);
        let (lp, logit_grad) = categorical_logprob_grad(&pi, tok)?;
        let mut g = ParamVector::zeros(student.params().layout().clone());
        g.values_mut()[ctx * v..(ctx + 1) * v].copy_from_slice(&logit_grad);
        steps.push(StepRecord::new(lp, q.log_prob(tok), g, i + 1));
        history.push(tok);
    }
    Trajectory::new(steps, 0)
}

/// Ancestral sample of up to `horizon` tokens from `model`, stopping after EOS.
pub fn sample_tokens<M: TokenModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prompt: &[u32],
    horizon: usize,
    rng: &mut R,
) -> Vec<u32> {
    let mut history = prompt.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let tok = model.next_dist(&history).sample(rng);
        out.push(tok);
        history.push(tok);
        if model.eos() == Some(tok) {
            break;
        }
    }
    out
}
