//! Alternating-task OPD distillation of toy teachers into a shared student.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{mean_final_distance, policy_input, rollout_traced, ToyEnvConfig};
use super::visitation::VisitationGrid;
use crate::error::{Error, Result};
use crate::estimators::{gradient_variance, micro_batch_ranges, Estimator};
use crate::nn::optim::{Adam, Optimizer};
use crate::nn::{GaussianHead, MlpModel, MlpSpec, ParamVector, OUTPUT_LAYER};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceBlock {
    Output,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Set by the caller; not part of the JSON schema.
    #[serde(skip)]
    pub gamma: f64,
    pub updates: usize,
    pub batch_size: usize,
    pub micro_batches: usize,
    pub lr: f64,
    pub reward_clamp: f64,
    /// Evaluate and record a visitation grid every this many updates.
    pub eval_every: usize,
    pub eval_rollouts: usize,
    /// Task ids visited in strict rotation, one full update each.
    pub tasks: Vec<u32>,
    pub variance_block: VarianceBlock,
    pub optimizer: Optimizer,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            gamma: 0.0,
            updates: 2000,
            batch_size: 64,
            micro_batches: 8,
            lr: 1e-3,
            reward_clamp: 1e4,
            eval_every: 500,
            eval_rollouts: 256,
            tasks: vec![0, 1],
            variance_block: VarianceBlock::Output,
            optimizer: Optimizer::Adam,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, env: &ToyEnvConfig) -> Result<()> {
        Estimator::gamma(self.gamma)?;
        micro_batch_ranges(self.batch_size, self.micro_batches)?;
        if !(self.lr > 0.0 && self.reward_clamp > 0.0) {
            return Err(Error::Config("student lr and reward clamp must be positive".into()));
        }
        if self.tasks.is_empty() || self.eval_rollouts == 0 || self.eval_every == 0 {
            return Err(Error::Config("tasks, eval_rollouts and eval_every must be nonempty/positive".into()));
        }
        for t in &self.tasks {
            env.task(*t)?;
        }
        Ok(())
    }
}

/// `log N(a; mu_s, sigma_s) - log N(a; mu_q, sigma_q)`
pub fn continuous_step_reward(student: &GaussianHead, teacher: &GaussianHead, action: f64) -> f64 {
    student.log_prob(action) - teacher.log_prob(action)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub task: u32,
    pub variance: f64,
    /// Mean `|s_T - target|` over the update's own rollouts.
    pub mean_final_distance: f64,
    pub grad_norm: f64,
    pub mean_reward: f64,
    /// Steps whose reward hit the clamp.
    pub clamped_steps: usize,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: MlpModel,
    pub records: Vec<UpdateRecord>,
    /// `(update, grid)` at each evaluation point; the last one follows training.
    pub grids: Vec<(usize, VisitationGrid)>,
    /// Final evaluation distance per task id.
    pub final_distance: Vec<f64>,
}

impl DistillOutcome {
    pub fn final_grid(&self) -> &VisitationGrid {
        &self.grids.last().expect("final evaluation grid").1
    }

    /// Mean variance over the last `fraction` of updates.
    pub fn late_variance(&self, fraction: f64) -> f64 {
        let n = self.records.len();
        let start = n - ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let tail = &self.records[start..];
        tail.iter().map(|r| r.variance).sum::<f64>() / tail.len() as f64
    }
}

/// Distill from a freshly initialized student.
pub fn distill_student(
    teachers: &[MlpModel],
    env: &ToyEnvConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<DistillOutcome> {
    let init_seed: u64 = rand::Rng::random(&mut rng::stream(seed, &[0x57D, 0]));
    let student = MlpModel::init(MlpSpec::toy_policy(), init_seed)?;
    distill_student_from(student, teachers, env, cfg, seed)
}

pub fn distill_student_from(
    mut student: MlpModel,
    teachers: &[MlpModel],
    env: &ToyEnvConfig,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<DistillOutcome> {
    env.validate()?;
    cfg.validate(env)?;
    if teachers.len() != env.tasks.len() {
        return Err(Error::Config(format!("{} teachers for {} tasks", teachers.len(), env.tasks.len())));
    }
    let estimator = Estimator::gamma(cfg.gamma)?;
    let ranges = micro_batch_ranges(cfg.batch_size, cfg.micro_batches)?;
    let mut records = Vec::with_capacity(cfg.updates);
    let mut grids = Vec::new();
    let mut adam = Adam::new(cfg.lr, student.params.len());

    for update in 0..cfg.updates {
        if update > 0 && update % cfg.eval_every == 0 {
            grids.push((update, evaluate(&student, env, cfg, seed, update)?.1));
        }
        let task = env.task(cfg.tasks[update % cfg.tasks.len()])?;
        let teacher = &teachers[task.id as usize];

        let per_traj: Vec<TrajectoryGrad> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(seed, &[0x57D, 1, update as u64, i as u64]);
                trajectory_gradient(&student, teacher, task, env.horizon, estimator, cfg.reward_clamp, &mut r)
            })
            .collect::<Result<_>>()?;

        let micro: Vec<ParamVector> = ranges
            .iter()
            .map(|range| {
                let grads: Vec<ParamVector> = per_traj[range.clone()].iter().map(|t| t.grad.clone()).collect();
                ParamVector::mean_of(&grads)
            })
            .collect::<Result<_>>()?;
        let probe: Vec<ParamVector> = match cfg.variance_block {
            VarianceBlock::Output => micro.iter().map(|g| g.restrict(&OUTPUT_LAYER)).collect::<Result<_>>()?,
            VarianceBlock::All => micro.clone(),
        };
        let block = match cfg.variance_block {
            VarianceBlock::Output => "output",
            VarianceBlock::All => "all",
        };
        let report = gradient_variance(&probe, cfg.batch_size, block)?;
        let batch_grad = ParamVector::mean_of(&micro)?;
        match cfg.optimizer {
            Optimizer::Sgd => student.params.add_scaled(&batch_grad, -cfg.lr)?,
            Optimizer::Adam => adam.step(&mut student.params, &batch_grad)?,
        }

        let n = cfg.batch_size as f64;
        let steps = (cfg.batch_size * env.horizon) as f64;
        records.push(UpdateRecord {
            update,
            task: task.id,
            variance: report.variance,
            mean_final_distance: per_traj.iter().map(|t| (t.final_state - task.target).abs()).sum::<f64>() / n,
            grad_norm: batch_grad.norm(),
            mean_reward: per_traj.iter().map(|t| t.reward_sum).sum::<f64>() / steps,
            clamped_steps: per_traj.iter().map(|t| t.clamped).sum(),
        });
    }
    let (final_distance, grid) = evaluate(&student, env, cfg, seed, cfg.updates)?;
    grids.push((cfg.updates, grid));
    Ok(DistillOutcome { student, records, grids, final_distance })
}

struct TrajectoryGrad {
    grad: ParamVector,
    final_state: f64,
    reward_sum: f64,
    clamped: usize,
}

fn trajectory_gradient(
    student: &MlpModel,
    teacher: &MlpModel,
    task: &super::env::TaskSpec,
    horizon: usize,
    estimator: Estimator,
    clamp: f64,
    rng: &mut rng::Rng,
) -> Result<TrajectoryGrad> {
    let traced = rollout_traced(student, task, horizon, 1.0, rng)?;
    let mut rewards = Vec::with_capacity(horizon);
    let mut clamped = 0;
    for (t, (_, head)) in traced.steps.iter().enumerate() {
        let s = traced.episode.states[t];
        let (teacher_head, _) = teacher.gaussian(&policy_input(task.id, s, t + 1, horizon))?;
        let r = continuous_step_reward(head, &teacher_head, traced.episode.actions[t]);
        if r.abs() > clamp {
            clamped += 1;
        }
        rewards.push(r.clamp(-clamp, clamp));
    }
    let weights = estimator.weights(&rewards);
    let mut grad = ParamVector::zeros(student.params.layout().clone());
    for (t, (cache, head)) in traced.steps.iter().enumerate() {
        if weights[t] != 0.0 {
            student.backward(cache, &head.log_prob_output_grad(traced.episode.actions[t]), weights[t], &mut grad);
        }
    }
    Ok(TrajectoryGrad { grad, final_state: traced.episode.final_state(), reward_sum: rewards.iter().sum(), clamped })
}

fn evaluate(
    student: &MlpModel,
    env: &ToyEnvConfig,
    cfg: &DistillConfig,
    seed: u64,
    update: usize,
) -> Result<(Vec<f64>, VisitationGrid)> {
    let mut grid = VisitationGrid::for_horizon(env.horizon);
    let mut distances = Vec::with_capacity(env.tasks.len());
    for task in &env.tasks {
        let (d, eps) =
            mean_final_distance(student, task, env.horizon, cfg.eval_rollouts, seed, 0xE7A1_0000 + update as u64)?;
        eps.iter().for_each(|e| grid.add_episode(e));
        distances.push(d);
    }
    Ok((distances, grid))
}
