//! Per-token reward scatter and position-wise log-probability gaps.

use crate::error::{Error, Result};
use crate::frame::{Cell, MetricFrame};
use crate::nn::{CategoricalDist, TabularLm, TokenModel};

pub const SCATTER_COLUMNS: [(&str, bool); 4] =
    [("step", true), ("pos", true), ("p_student", false), ("p_teacher", false)];

pub const POSGAP_COLUMNS: [(&str, bool); 8] = [
    ("bucket_lo", true),
    ("bucket_hi", true),
    ("count", true),
    ("q05", false),
    ("q25", false),
    ("q50", false),
    ("q75", false),
    ("q95", false),
];

fn walk<S, T, F>(rollouts: &[Vec<u32>], prompt: &[u32], student: &S, teacher: &T, mut f: F)
where
    S: TokenModel + ?Sized,
    T: TokenModel + ?Sized,
    F: FnMut(usize, f64, f64),
{
    for tokens in rollouts {
        let mut history = prompt.to_vec();
        for (i, &tok) in tokens.iter().enumerate() {
            let p = student.next_dist(&history).prob(tok);
            let q = teacher.next_dist(&history).prob(tok);
            f(i + 1, p, q);
            history.push(tok);
        }
    }
}

/// One row per sampled token: its probability under student and teacher.
/// The token is rewarded when `p_teacher > p_student`.
pub fn reward_scatter<S, T>(
    rollouts: &[Vec<u32>],
    prompt: &[u32],
    student: &S,
    teacher: &T,
    step: usize,
) -> Result<MetricFrame>
where
    S: TokenModel + ?Sized,
    T: TokenModel + ?Sized,
{
    let mut frame = MetricFrame::new(&SCATTER_COLUMNS)?;
    let mut err = None;
    walk(rollouts, prompt, student, teacher, |pos, p, q| {
        if let Err(e) = frame.push(&[step.into(), pos.into(), p.into(), q.into()]) {
            err.get_or_insert(e);
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(frame),
    }
}

/// Share of scatter rows where the teacher assigns less mass than the student.
pub fn negative_reward_fraction(scatter: &MetricFrame) -> f64 {
    let (Some(p), Some(q)) = (scatter.floats("p_student"), scatter.floats("p_teacher")) else {
        return f64::NAN;
    };
    if p.is_empty() {
        return f64::NAN;
    }
    p.iter().zip(q).filter(|(p, q)| q < p).count() as f64 / p.len() as f64
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantiles of `ln q - ln pi` on sampled tokens, bucketed by position.
///
/// Bucket `j` covers positions `edges[j] <= t < edges[j + 1]` with `t`
/// counted from 1.
pub fn position_gap_profile<S, T>(
    rollouts: &[Vec<u32>],
    prompt: &[u32],
    student: &S,
    teacher: &T,
    edges: &[usize],
) -> Result<MetricFrame>
where
    S: TokenModel + ?Sized,
    T: TokenModel + ?Sized,
{
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bucket edges must be strictly increasing with at least two entries".into()));
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); edges.len() - 1];
    walk(rollouts, prompt, student, teacher, |pos, p, q| {
        if let Some(j) = edges.windows(2).position(|w| w[0] <= pos && pos < w[1]) {
            buckets[j].push(q.ln() - p.ln());
        }
    });
    let mut frame = MetricFrame::new(&POSGAP_COLUMNS)?;
    for (j, mut gaps) in buckets.into_iter().enumerate() {
        gaps.sort_by(f64::total_cmp);
        let mut row: Vec<Cell> = vec![edges[j].into(), edges[j + 1].into(), gaps.len().into()];
        row.extend([0.05, 0.25, 0.5, 0.75, 0.95].map(|q| Cell::Float(quantile_sorted(&gaps, q))));
        frame.push(&row)?;
    }
    Ok(frame)
}

/// Student that drifts from `base` toward `away` as generation proceeds:
/// at position `t` (from 0) its logits are `(1 - a) base + a away` with
/// `a = min(1, t / (horizon - 1))`.
#[derive(Debug, Clone)]
pub struct DriftingModel {
    base: TabularLm,
    away: TabularLm,
    prompt_len: usize,
    horizon: usize,
}

impl DriftingModel {
    pub fn new(base: TabularLm, away: TabularLm, prompt_len: usize, horizon: usize) -> Result<Self> {
        if base.vocab_size() != away.vocab_size() {
            return Err(Error::Dimension { expected: base.vocab_size(), got: away.vocab_size() });
        }
        if horizon < 2 {
            return Err(Error::Config("drift horizon must be at least 2".into()));
        }
        Ok(DriftingModel { base, away, prompt_len, horizon })
    }
}

impl TokenModel for DriftingModel {
    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    fn next_dist(&self, history: &[u32]) -> CategoricalDist {
        let t = history.len().saturating_sub(self.prompt_len);
        let a = (t as f64 / (self.horizon - 1) as f64).min(1.0);
        let zb = self.base.row_logits(self.base.context_index(history));
        let za = self.away.row_logits(self.away.context_index(history));
        CategoricalDist::from_logits(zb.iter().zip(za).map(|(b, w)| (1.0 - a) * b + a * w).collect())
    }

    fn eos(&self) -> Option<u32> {
        self.base.eos()
    }
}
