use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ForwardCache, GaussianHead, MlpModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: u32,
    pub name: String,
    pub start: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherReward {
    /// `-|s_{t+1} - target|` at every step.
    Dense,
    /// `-|s_T - target|` on the final step only.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEnvConfig {
    pub tasks: Vec<TaskSpec>,
    pub horizon: usize,
    pub teacher_reward: TeacherReward,
}

impl Default for ToyEnvConfig {
    /// Two mirror tasks: left starts at +2 aiming for -3, right starts at -2
    /// aiming for +3. 20 steps per episode.
    fn default() -> Self {
        ToyEnvConfig {
            tasks: vec![
                TaskSpec { id: 0, name: "left".into(), start: 2.0, target: -3.0 },
                TaskSpec { id: 1, name: "right".into(), start: -2.0, target: 3.0 },
            ],
            horizon: 20,
            teacher_reward: TeacherReward::Dense,
        }
    }
}

impl ToyEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("toy horizon must be positive".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("toy environment needs at least one task".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.id as usize != i {
                return Err(Error::Config(format!("task ids must be 0..n in order, found {} at {i}", t.id)));
            }
        }
        Ok(())
    }

    pub fn task(&self, id: u32) -> Result<&TaskSpec> {
        self.tasks.get(id as usize).ok_or_else(|| Error::Config(format!("unknown task id {id}")))
    }
}

/// `s_{t+1} = s_t + delta`
pub fn env_step(state: f64, delta: f64) -> f64 {
    state + delta
}

/// `(task encoding, position, t / T)` for a 1-based step `t`.
pub fn policy_input(task_id: u32, state: f64, t: usize, horizon: usize) -> [f64; 3] {
    [task_id as f64, state, t as f64 / horizon as f64]
}

/// One rollout of a Gaussian policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task: u32,
    /// `s_0 ..= s_T`
    pub states: Vec<f64>,
    /// `delta_1 ..= delta_T`
    pub actions: Vec<f64>,
}

impl Episode {
    pub fn final_state(&self) -> f64 {
        *self.states.last().expect("episode has a start state")
    }
}

/// A rollout with the forward caches needed to backpropagate log-densities.
pub(crate) struct TracedEpisode {
    pub episode: Episode,
    pub steps: Vec<(ForwardCache, GaussianHead)>,
}

/// Roll out `policy` on `task`. Noise draws are multiplied by `noise_sign`,
/// which lets a harness replay a mirrored noise stream.
pub(crate) fn rollout_traced<R: Rng + ?Sized>(
    policy: &MlpModel,
    task: &TaskSpec,
    horizon: usize,
    noise_sign: f64,
    rng: &mut R,
) -> Result<TracedEpisode> {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut steps = Vec::with_capacity(horizon);
    let mut s = task.start;
    states.push(s);
    for t in 1..=horizon {
        let (head, cache) = policy.gaussian(&policy_input(task.id, s, t, horizon))?;
        let eps: f64 = rng.sample(StandardNormal);
        let delta = head.sample_with_noise(noise_sign * eps);
        s = env_step(s, delta);
        states.push(s);
        actions.push(delta);
        steps.push((cache, head));
    }
    Ok(TracedEpisode { episode: Episode { task: task.id, states, actions }, steps })
}

pub fn rollout<R: Rng + ?Sized>(policy: &MlpModel, task: &TaskSpec, horizon: usize, rng: &mut R) -> Result<Episode> {
    Ok(rollout_traced(policy, task, horizon, 1.0, rng)?.episode)
}

/// Replay with negated noise, as used by the mirror-symmetry harness.
pub fn rollout_mirrored_noise<R: Rng + ?Sized>(
    policy: &MlpModel,
    task: &TaskSpec,
    horizon: usize,
    rng: &mut R,
) -> Result<Episode> {
    Ok(rollout_traced(policy, task, horizon, -1.0, rng)?.episode)
}

/// Parameters of a policy that acts on the mirrored task: fed
/// `(1, -s, tau)` it outputs the negated mean and the same log-std that
/// `model` produces for `(0, s, tau)`.
pub fn mirror_policy(model: &MlpModel) -> Result<MlpModel> {
    if model.spec.input_dim != 3 || model.spec.output_dim != 2 {
        return Err(Error::Config("mirroring needs a 3-input Gaussian policy".into()));
    }
    let mut m = model.clone();
    let h0 = model.spec.hidden_dims[0];
    let w = model.params.segment("l0.weight").expect("l0.weight").to_vec();
    {
        let b = m.params.segment_mut("l0.bias").expect("l0.bias");
        for (o, bias) in b.iter_mut().enumerate().take(h0) {
            *bias -= w[o * 3];
        }
    }
    {
        let wm = m.params.segment_mut("l0.weight").expect("l0.weight");
        for o in 0..h0 {
            wm[o * 3 + 1] = -wm[o * 3 + 1];
        }
    }
    let h1 = model.spec.hidden_dims[1];
    m.params.segment_mut("out.weight").expect("out.weight")[..h1].iter_mut().for_each(|v| *v = -*v);
    m.params.segment_mut("out.bias").expect("out.bias")[0] *= -1.0;
    Ok(m)
}

/// Mean `|s_T - target|` over `count` rollouts drawn from `(seed, tag, i)` streams.
pub fn mean_final_distance(
    policy: &MlpModel,
    task: &TaskSpec,
    horizon: usize,
    count: usize,
    seed: u64,
    tag: u64,
) -> Result<(f64, Vec<Episode>)> {
    use rayon::prelude::*;
    let episodes: Vec<Episode> = (0..count)
        .into_par_iter()
        .map(|i| rollout(policy, task, horizon, &mut crate::rng::stream(seed, &[tag, task.id as u64, i as u64])))
        .collect::<Result<_>>()?;
    let mean = episodes.iter().map(|e| (e.final_state() - task.target).abs()).sum::<f64>() / count as f64;
    Ok((mean, episodes))
}
