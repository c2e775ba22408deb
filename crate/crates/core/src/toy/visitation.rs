use serde::{Deserialize, Serialize};

use super::env::Episode;

/// Visit counts over (time step, position) bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitationGrid {
    pub t_bins: usize,
    pub x_bins: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Row-major `[t_bin][x_bin]`.
    pub counts: Vec<u64>,
}

impl VisitationGrid {
    /// One time bin per step and 40 position bins over `[-5, 5]`.
    pub fn for_horizon(horizon: usize) -> Self {
        Self::new(horizon, 40, -5.0, 5.0)
    }

    pub fn new(t_bins: usize, x_bins: usize, x_min: f64, x_max: f64) -> Self {
        VisitationGrid { t_bins, x_bins, x_min, x_max, counts: vec![0; t_bins * x_bins] }
    }

    /// Positions outside the range land in the edge bins.
    pub fn x_bin(&self, x: f64) -> usize {
        let frac = (x - self.x_min) / (self.x_max - self.x_min);
        let b = (frac * self.x_bins as f64).floor();
        if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(self.x_bins - 1)
        }
    }

    /// Record `s_1 ..= s_T`.
    pub fn add_episode(&mut self, ep: &Episode) {
        let horizon = ep.actions.len();
        for t in 1..=horizon {
            let tb = ((t - 1) * self.t_bins / horizon).min(self.t_bins - 1);
            let xb = self.x_bin(ep.states[t]);
            self.counts[tb * self.x_bins + xb] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, t_bin: usize, x_bin: usize) -> u64 {
        self.counts[t_bin * self.x_bins + x_bin]
    }
}
