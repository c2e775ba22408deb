//! REINFORCE teachers for the single-task toy problems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{mean_final_distance, rollout_traced, Episode, TaskSpec, TeacherReward, ToyEnvConfig};
use crate::error::{Error, Result};
use crate::nn::{MlpModel, MlpSpec, ParamVector};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub updates: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_rollouts: usize,
    /// Convergence gate on the mean final distance to target.
    pub gate_distance: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { updates: 2000, batch_size: 64, lr: 1.5e-3, eval_rollouts: 256, gate_distance: 0.5 }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("teacher batch size must be at least 2".into()));
        }
        if !(self.lr > 0.0) || self.eval_rollouts == 0 {
            return Err(Error::Config("teacher lr and eval_rollouts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherReport {
    pub task: u32,
    pub mean_final_distance: f64,
    pub mean_final_position: f64,
    /// `(update, mean episode return)` for every update.
    pub returns: Vec<(usize, f64)>,
}

/// Per-step environment rewards for an episode.
pub fn episode_rewards(ep: &Episode, target: f64, kind: TeacherReward) -> Vec<f64> {
    let t_max = ep.actions.len();
    (1..=t_max)
        .map(|t| match kind {
            TeacherReward::Dense => -(ep.states[t] - target).abs(),
            TeacherReward::Terminal if t == t_max => -(ep.states[t] - target).abs(),
            TeacherReward::Terminal => 0.0,
        })
        .collect()
}

fn reward_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc += rewards[t];
        out[t] = acc;
    }
    out
}

/// Train a teacher on one task. Fails with [`Error::Convergence`] when the
/// final evaluation misses the distance gate.
pub fn train_teacher(
    task_id: u32,
    env: &ToyEnvConfig,
    cfg: &TeacherConfig,
    seed: u64,
) -> Result<(MlpModel, TeacherReport)> {
    let (model, report) = train_teacher_unchecked(task_id, env, cfg, seed)?;
    if !(report.mean_final_distance < cfg.gate_distance) {
        return Err(Error::Convergence(format!(
            "teacher for task {} ends {:.3} from target (gate {})",
            task_id, report.mean_final_distance, cfg.gate_distance
        )));
    }
    Ok((model, report))
}

/// REINFORCE with a per-batch, per-step mean baseline on the reward-to-go.
pub fn train_teacher_unchecked(
    task_id: u32,
    env: &ToyEnvConfig,
    cfg: &TeacherConfig,
    seed: u64,
) -> Result<(MlpModel, TeacherReport)> {
    env.validate()?;
    cfg.validate()?;
    let task = env.task(task_id)?.clone();
    let init_seed: u64 = rand::Rng::random(&mut rng::stream(seed, &[0x7EAC, task_id as u64]));
    let mut model = MlpModel::init(MlpSpec::toy_policy(), init_seed)?;
    let mut returns = Vec::with_capacity(cfg.updates);
    for update in 0..cfg.updates {
        let (grad, mean_return) = reinforce_gradient(&model, &task, env, cfg.batch_size, seed, update)?;
        model.params.add_scaled(&grad, -cfg.lr)?;
        returns.push((update, mean_return));
    }
    let (dist, eps) = mean_final_distance(&model, &task, env.horizon, cfg.eval_rollouts, seed, 0xE7A1)?;
    let pos = eps.iter().map(Episode::final_state).sum::<f64>() / eps.len() as f64;
    Ok((model, TeacherReport { task: task_id, mean_final_distance: dist, mean_final_position: pos, returns }))
}

/// Gradient of the negated expected return, and the batch mean return.
fn reinforce_gradient(
    model: &MlpModel,
    task: &TaskSpec,
    env: &ToyEnvConfig,
    batch: usize,
    seed: u64,
    update: usize,
) -> Result<(ParamVector, f64)> {
    let traced: Vec<_> = (0..batch)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[0x7EAC, task.id as u64, update as u64, i as u64]);
            rollout_traced(model, task, env.horizon, 1.0, &mut r)
        })
        .collect::<Result<_>>()?;
    let rtg: Vec<Vec<f64>> =
        traced.iter().map(|t| reward_to_go(&episode_rewards(&t.episode, task.target, env.teacher_reward))).collect();
    let horizon = env.horizon;
    let baseline: Vec<f64> = (0..horizon).map(|t| rtg.iter().map(|g| g[t]).sum::<f64>() / batch as f64).collect();
    let mean_return = rtg.iter().map(|g| g[0]).sum::<f64>() / batch as f64;

    let scale = -1.0 / batch as f64;
    let per_traj: Vec<ParamVector> = traced
        .par_iter()
        .zip(rtg.par_iter())
        .map(|(tr, g)| {
            let mut grad = ParamVector::zeros(model.params.layout().clone());
            for (t, (cache, head)) in tr.steps.iter().enumerate() {
                let adv = g[t] - baseline[t];
                model.backward(cache, &head.log_prob_output_grad(tr.episode.actions[t]), scale * adv, &mut grad);
            }
            grad
        })
        .collect();
    let mut total = ParamVector::zeros(model.params.layout().clone());
    for g in &per_traj {
        total.add_scaled(g, 1.0)?;
    }
    Ok((total, mean_return))
}
