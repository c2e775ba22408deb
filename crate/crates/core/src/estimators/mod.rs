//! The OPD gradient estimator family and the micro-batch variance protocol.
//!
//! Every estimator has the shape `sum_t w_t g_t`; only the per-step weight
//! `w_t` built from the reward terms differs:
//!
//! | estimator        | `w_t`                                  |
//! |------------------|----------------------------------------|
//! | token            | `r_t`                                  |
//! | gamma            | `sum_{t' >= t} gamma^(t'-t) r_t'`      |
//! | sequence, causal | `sum_{t' >= t} r_t'`                   |
//! | sequence, full   | `sum_{t'} r_t'`                        |

mod bias;
mod probe;
mod record;
mod variance;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

pub use bias::{bias_gap, bias_gap_from};
pub use probe::{
    adversarial_trajectory, fit_loglog_slope, mc_scaling_probe, observed_bounds, variance_scaling_probe,
    BoundConstants, ProbeRow,
};
pub use record::{sample_tokens, score_tabular, StepRecord, Trajectory};
pub use variance::{gradient_variance, micro_batch_ranges, VarianceReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant", content = "gamma")]
pub enum Estimator {
    Token,
    Gamma(f64),
    SequenceFull,
    SequenceCausal,
}

impl Estimator {
    pub fn gamma(gamma: f64) -> Result<Self> {
        let e = Estimator::Gamma(gamma);
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Estimator::Gamma(g) if !(0.0..=1.0).contains(g) => {
                Err(Error::Config(format!("gamma must lie in [0, 1], got {g}")))
            }
            _ => Ok(()),
        }
    }

    /// Per-step weights `w_t` such that the estimate is `sum_t w_t g_t`.
    pub fn weights(&self, rewards: &[f64]) -> Vec<f64> {
        match *self {
            Estimator::Token => rewards.to_vec(),
            Estimator::Gamma(g) => discounted_suffix(rewards, g),
            Estimator::SequenceCausal => discounted_suffix(rewards, 1.0),
            Estimator::SequenceFull => {
                let total: f64 = rewards.iter().sum();
                vec![total; rewards.len()]
            }
        }
    }

    /// The estimate for one trajectory.
    pub fn estimate(&self, traj: &Trajectory) -> Result<ParamVector> {
        self.validate()?;
        let first =
            traj.steps().first().ok_or_else(|| Error::Config("estimator needs a nonempty trajectory".into()))?;
        let weights = self.weights(&traj.rewards());
        let mut out = ParamVector::zeros(first.score_grad.layout().clone());
        for (w, step) in weights.iter().zip(traj.steps()) {
            out.add_scaled(&step.score_grad, *w)?;
        }
        Ok(out)
    }
}

/// `w_t = r_t + gamma * w_{t+1}`, evaluated back to front.
///
/// With `gamma = 0` every weight is exactly `r_t`, and with `gamma = 1` the
/// arithmetic is identical to the causal return-to-go.
fn discounted_suffix(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = if gamma == 0.0 { *r } else { r + gamma * acc };
        out[t] = acc;
    }
    out
}

/// `sum_t r_t g_t`
pub fn token_estimator(traj: &Trajectory) -> Result<ParamVector> {
    Estimator::Token.estimate(traj)
}

/// `sum_t (sum_{t' >= t} gamma^(t'-t) r_t') g_t`
pub fn gamma_estimator(traj: &Trajectory, gamma: f64) -> Result<ParamVector> {
    Estimator::gamma(gamma)?.estimate(traj)
}

/// Full form `(sum r)(sum g)` or causal return-to-go form.
pub fn sequence_estimator(traj: &Trajectory, causal: bool) -> Result<ParamVector> {
    if causal {
        Estimator::SequenceCausal.estimate(traj)
    } else {
        Estimator::SequenceFull.estimate(traj)
    }
}
