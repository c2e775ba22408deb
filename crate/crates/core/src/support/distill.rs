//! On-policy token distillation of tabular students.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::diagnostics::{position_gap_profile, reward_scatter, POSGAP_COLUMNS, SCATTER_COLUMNS};
use super::lsm::LossConfig;
use super::sampling::{sample_group, RolloutConfig};
use crate::error::{Error, Result};
use crate::frame::{Cell, MetricFrame};
use crate::nn::optim::{Adam, Optimizer};
use crate::nn::{softmax, TabularLm, TokenModel};
use crate::oracle::{check_cap, exact_sequence_kl, EnumerationInstance};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    /// The unsharpened base model.
    Base,
    /// The sharpened teacher itself.
    Teacher,
}

/// Synthetic teacher/student pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TokenTaskSpec {
    /// A random base model sharpened by `teacher_temperature` is the
    /// teacher; the student starts from `student_init` plus Gaussian logit noise.
    Sharp {
        vocab: usize,
        order: usize,
        horizon: usize,
        base_scale: f64,
        teacher_temperature: f64,
        student_init: StudentInit,
        student_noise: f64,
    },
    /// The scoring teacher gives the student's EOS id only `epsilon` mass;
    /// the exact KL is measured against the unaltered teacher.
    Mismatch { vocab: usize, order: usize, horizon: usize, eos: u32, eos_mass: f64, epsilon: f64, student_noise: f64 },
}

impl TokenTaskSpec {
    pub fn sharp_default() -> Self {
        TokenTaskSpec::Sharp {
            vocab: 64,
            order: 1,
            horizon: 3,
            base_scale: 1.0,
            teacher_temperature: 0.25,
            student_init: StudentInit::Teacher,
            student_noise: 1.0,
        }
    }

    pub fn mismatch_default() -> Self {
        TokenTaskSpec::Mismatch {
            vocab: 8,
            order: 1,
            horizon: 5,
            eos: 7,
            eos_mass: 0.25,
            epsilon: 1e-4,
            student_noise: 0.5,
        }
    }

    pub fn vocab(&self) -> usize {
        match self {
            TokenTaskSpec::Sharp { vocab, .. } | TokenTaskSpec::Mismatch { vocab, .. } => *vocab,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            TokenTaskSpec::Sharp { horizon, .. } | TokenTaskSpec::Mismatch { horizon, .. } => *horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab() < 2 {
            return Err(Error::Config("vocab must be at least 2".into()));
        }
        if self.horizon() == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {x}")))
            }
        };
        match self {
            TokenTaskSpec::Sharp { order, base_scale, teacher_temperature, student_noise, .. } => {
                crate::nn::tabular::context_count(self.vocab(), *order)?;
                positive("base_scale", *base_scale)?;
                positive("teacher_temperature", *teacher_temperature)?;
                if !(*student_noise >= 0.0) {
                    return Err(Error::Config("student_noise must be nonnegative".into()));
                }
                Ok(())
            }
            TokenTaskSpec::Mismatch { order, eos, eos_mass, epsilon, student_noise, .. } => {
                crate::nn::tabular::context_count(self.vocab(), *order)?;
                if *eos as usize >= self.vocab() {
                    return Err(Error::TokenOutOfRange { token: *eos, vocab: self.vocab() });
                }
                if !(*eos_mass > 0.0 && *eos_mass < 1.0) || !(*epsilon > 0.0 && *epsilon < 1.0) {
                    return Err(Error::Config("eos_mass and epsilon must lie in (0, 1)".into()));
                }
                if !(*student_noise >= 0.0) {
                    return Err(Error::Config("student_noise must be nonnegative".into()));
                }
                Ok(())
            }
        }
    }

    pub fn build(&self, seed: u64) -> Result<TokenTask> {
        self.validate()?;
        let sub = |tag: u64| -> u64 { rng::stream(seed, &[0x7A5C, tag]).random() };
        match *self {
            TokenTaskSpec::Sharp {
                vocab,
                order,
                horizon,
                base_scale,
                teacher_temperature,
                student_init,
                student_noise,
            } => {
                let base = TabularLm::random(vocab, order, base_scale, sub(1))?;
                let teacher = base.sharpened(teacher_temperature);
                let start = match student_init {
                    StudentInit::Base => &base,
                    StudentInit::Teacher => &teacher,
                };
                let student = perturbed(start, student_noise, sub(2));
                Ok(TokenTask {
                    student,
                    scoring_teacher: teacher.clone(),
                    target_teacher: teacher,
                    horizon,
                    prompt: vec![],
                })
            }
            TokenTaskSpec::Mismatch { vocab, order, horizon, eos, eos_mass, epsilon, student_noise } => {
                let base = TabularLm::random(vocab, order, 1.0, sub(1))?;
                let mut target = base.clone().with_eos(Some(eos))?;
                let mut scoring = target.clone();
                for ctx in 0..target.num_contexts() {
                    let p = softmax(base.row_logits(ctx));
                    let rest: f64 = p.iter().enumerate().filter(|(v, _)| *v != eos as usize).map(|(_, x)| x).sum();
                    for v in 0..vocab {
                        let (t, s) = if v == eos as usize {
                            (eos_mass, epsilon)
                        } else {
                            (p[v] / rest * (1.0 - eos_mass), p[v] / rest * (1.0 - epsilon))
                        };
                        target.row_logits_mut(ctx)[v] = t.ln();
                        scoring.row_logits_mut(ctx)[v] = s.ln();
                    }
                }
                let student = perturbed(&target, student_noise, sub(2));
                Ok(TokenTask { student, scoring_teacher: scoring, target_teacher: target, horizon, prompt: vec![] })
            }
        }
    }
}

fn perturbed(model: &TabularLm, noise: f64, seed: u64) -> TabularLm {
    let mut out = model.clone();
    let mut r = rng::seeded(seed);
    for z in out.params_mut().values_mut() {
        let e: f64 = StandardNormal.sample(&mut r);
        *z += noise * e;
    }
    out
}

/// Student initialization, the teacher that scores rollouts, and the
/// teacher the exact KL is measured against.
#[derive(Debug, Clone)]
pub struct TokenTask {
    pub student: TabularLm,
    pub scoring_teacher: TabularLm,
    pub target_teacher: TabularLm,
    pub horizon: usize,
    pub prompt: Vec<u32>,
}

impl TokenTask {
    /// Exact sequence KL of `student` to the target teacher, or `None` past the enumeration cap.
    pub fn exact_kl(&self, student: &TabularLm) -> Result<Option<f64>> {
        if check_cap(student.vocab_size(), self.horizon).is_err() {
            return Ok(None);
        }
        let inst = EnumerationInstance::with_prompt(
            student.clone(),
            self.target_teacher.clone(),
            self.horizon,
            self.prompt.clone(),
        )?;
        exact_sequence_kl(&inst).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenDistillConfig {
    pub loss: LossConfig,
    pub rollout: RolloutConfig,
    pub steps: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    /// Exact KL is computed every `kl_every` steps; other rows hold NaN.
    pub kl_every: usize,
    /// Steps at which the reward scatter is recorded.
    #[serde(default)]
    pub scatter_steps: Vec<usize>,
    /// Position bucket edges for the final gap profile.
    pub gap_edges: Vec<usize>,
    /// Rollouts drawn from the final student for the gap profile.
    pub gap_rollouts: usize,
}

impl TokenDistillConfig {
    pub fn for_task(task: &TokenTaskSpec, loss: LossConfig) -> Self {
        let horizon = task.horizon();
        TokenDistillConfig {
            loss,
            rollout: RolloutConfig {
                group_size: 8,
                temperature: 1.0,
                top_p: 0.9,
                max_length: horizon,
                ..Default::default()
            },
            steps: 300,
            lr: 5.0,
            optimizer: Optimizer::Sgd,
            kl_every: 10,
            scatter_steps: vec![0],
            gap_edges: (1..=horizon + 1).collect(),
            gap_rollouts: 256,
        }
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        self.loss.validate(vocab)?;
        self.rollout.validate()?;
        self.rollout.mask.validate(vocab)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.kl_every == 0 {
            return Err(Error::Config("kl_every must be at least 1".into()));
        }
        if self.gap_edges.len() < 2 || self.gap_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("gap_edges must be strictly increasing with at least two entries".into()));
        }
        if self.gap_rollouts == 0 {
            return Err(Error::Config("gap_rollouts must be at least 1".into()));
        }
        Ok(())
    }
}

pub const TRAIN_COLUMNS: [(&str, bool); 4] =
    [("step", true), ("loss", false), ("grad_norm", false), ("kl_exact", false)];

#[derive(Debug, Clone)]
pub struct TokenDistillOutcome {
    pub student: TabularLm,
    pub train: MetricFrame,
    pub scatter: MetricFrame,
    pub posgap: MetricFrame,
    pub initial_kl: Option<f64>,
    pub final_kl: Option<f64>,
}

/// Train `task.student` for `cfg.steps` updates on its own rollouts.
pub fn distill_tokens(task: &TokenTask, cfg: &TokenDistillConfig, seed: u64) -> Result<TokenDistillOutcome> {
    let vocab = task.student.vocab_size();
    cfg.validate(vocab)?;
    let mut rollout_cfg = cfg.rollout.clone();
    rollout_cfg.max_length = rollout_cfg.max_length.min(task.horizon);
    let mut student = task.student.clone();
    let mut adam = Adam::new(cfg.lr, student.params().len());
    let mut train = MetricFrame::new(&TRAIN_COLUMNS)?;
    let mut scatter = MetricFrame::new(&SCATTER_COLUMNS)?;
    let initial_kl = task.exact_kl(&student)?;
    for step in 0..cfg.steps {
        let rollouts = sample_group(&student, &task.prompt, &rollout_cfg, seed, step as u64)?;
        if cfg.scatter_steps.contains(&step) {
            scatter.extend(&reward_scatter(&rollouts, &task.prompt, &student, &task.scoring_teacher, step)?)?;
        }
        let kl = if step % cfg.kl_every == 0 {
            match step {
                0 => initial_kl,
                _ => task.exact_kl(&student)?,
            }
            .unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let (loss, grad) = cfg.loss.evaluate(&rollouts, &task.prompt, &student, &task.scoring_teacher)?;
        if !loss.is_finite() || grad.values().iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!("non-finite loss or gradient at step {step}")));
        }
        train.push(&[step.into(), Cell::Float(loss), Cell::Float(grad.norm()), Cell::Float(kl)])?;
        match cfg.optimizer {
            Optimizer::Sgd => student.params_mut().add_scaled(&grad, -cfg.lr)?,
            Optimizer::Adam => adam.step(student.params_mut(), &grad)?,
        }
    }
    let final_kl = task.exact_kl(&student)?;
    if cfg.steps == 0 {
        let posgap = MetricFrame::new(&POSGAP_COLUMNS)?;
        return Ok(TokenDistillOutcome { student, train, scatter, posgap, initial_kl, final_kl });
    }
    let gap_cfg = RolloutConfig { group_size: cfg.gap_rollouts, top_p: 1.0, ..rollout_cfg };
    let eval = sample_group(&student, &task.prompt, &gap_cfg, seed ^ 0xE7A1, u64::MAX)?;
    let posgap = position_gap_profile(&eval, &task.prompt, &student, &task.scoring_teacher, &cfg.gap_edges)?;
    Ok(TokenDistillOutcome { student, train, scatter, posgap, initial_kl, final_kl })
}
