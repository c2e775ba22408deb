use rayon::prelude::*;

use super::{sequence_estimator, token_estimator, StepRecord, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{ParamVector, TabularLm};
use crate::rng;

/// Uniform bounds `|r_t| <= B_r` and `||g_t|| <= B_g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub reward_bound: f64,
    pub score_bound: f64,
}

impl BoundConstants {
    pub fn new(reward_bound: f64, score_bound: f64) -> Result<Self> {
        if !(reward_bound > 0.0 && score_bound > 0.0) {
            return Err(Error::Config("bound constants must be positive".into()));
        }
        Ok(BoundConstants { reward_bound, score_bound })
    }

    /// `T * B_r * B_g`
    pub fn token_norm_bound(&self, horizon: usize) -> f64 {
        horizon as f64 * self.reward_bound * self.score_bound
    }

    /// `T^2 * B_r * B_g`
    pub fn sequence_norm_bound(&self, horizon: usize) -> f64 {
        (horizon * horizon) as f64 * self.reward_bound * self.score_bound
    }
}

/// Tightest constants valid for the given trajectories.
pub fn observed_bounds(trajs: &[Trajectory]) -> Result<BoundConstants> {
    let mut br: f64 = 0.0;
    let mut bg: f64 = 0.0;
    for s in trajs.iter().flat_map(|t| t.steps()) {
        br = br.max(s.reward.abs());
        bg = bg.max(s.score_grad.norm());
    }
    BoundConstants::new(br, bg)
}

/// Rewards pinned at `B_r` and every score equal to `B_g e_1`: the case in
/// which both worst-case norm bounds hold with equality.
pub fn adversarial_trajectory(constants: BoundConstants, horizon: usize, dim: usize) -> Result<Trajectory> {
    if dim == 0 {
        return Err(Error::Config("score dimension must be positive".into()));
    }
    let mut g = vec![0.0; dim];
    g[0] = constants.score_bound;
    let steps =
        (1..=horizon).map(|t| StepRecord::synthetic(constants.reward_bound, ParamVector::flat(g.clone()), t)).collect();
    Trajectory::new(steps, 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub horizon: usize,
    /// `E ||g_tok||^2`
    pub token_second_moment: f64,
    /// `E ||g_seq||^2` for the full (non-causal) sequence estimator.
    pub sequence_second_moment: f64,
}

/// Second moments on the adversarial construction. The construction is
/// deterministic, so each moment is a single squared norm.
pub fn variance_scaling_probe(constants: BoundConstants, horizons: &[usize], dim: usize) -> Result<Vec<ProbeRow>> {
    horizons
        .iter()
        .map(|&h| {
            let traj = adversarial_trajectory(constants, h, dim)?;
            Ok(ProbeRow {
                horizon: h,
                token_second_moment: token_estimator(&traj)?.norm_sq(),
                sequence_second_moment: sequence_estimator(&traj, false)?.norm_sq(),
            })
        })
        .collect()
}

/// Monte Carlo second moments for trajectories sampled from a tabular student.
pub fn mc_scaling_probe(
    student: &TabularLm,
    teacher: &TabularLm,
    horizons: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    if samples == 0 {
        return Err(Error::Config("probe needs at least one sample".into()));
    }
    horizons
        .iter()
        .map(|&h| {
            let moments: Vec<(f64, f64)> = (0..samples)
                .into_par_iter()
                .map(|i| -> Result<(f64, f64)> {
                    let mut r = rng::stream(seed, &[h as u64, i as u64]);
                    let tokens = super::sample_tokens(student, &[], h, &mut r);
                    let traj = super::score_tabular(student, teacher, &[], &tokens)?;
                    Ok((token_estimator(&traj)?.norm_sq(), sequence_estimator(&traj, false)?.norm_sq()))
                })
                .collect::<Result<_>>()?;
            let n = samples as f64;
            Ok(ProbeRow {
                horizon: h,
                token_second_moment: moments.iter().map(|m| m.0).sum::<f64>() / n,
                sequence_second_moment: moments.iter().map(|m| m.1).sum::<f64>() / n,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Config("slope fit needs two or more positive points".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
