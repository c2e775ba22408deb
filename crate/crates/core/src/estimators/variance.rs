use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Spread of micro-batch gradients around their mean for one update.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub variance: f64,
    pub micro_batch_count: usize,
    pub batch_size: usize,
    /// Which parameter block the gradients cover, e.g. `"output"` or `"all"`.
    pub block: String,
}

/// `(1/M) sum_m ||g_m - g_bar||^2` over `M >= 2` micro-batch gradients.
pub fn gradient_variance(micro_grads: &[ParamVector], batch_size: usize, block: &str) -> Result<VarianceReport> {
    let m = micro_grads.len();
    if m < 2 {
        return Err(Error::Config(format!("variance needs at least 2 micro-batches, got {m}")));
    }
    // Shift by the first gradient before averaging; identical inputs then
    // give exactly zero.
    let anchor = &micro_grads[0];
    let shifted: Vec<ParamVector> = micro_grads
        .iter()
        .map(|g| {
            let mut d = g.clone();
            d.add_scaled(anchor, -1.0)?;
            Ok(d)
        })
        .collect::<Result<_>>()?;
    let mean = ParamVector::mean_of(&shifted)?;
    let mut total = 0.0;
    for d in &shifted {
        total += d.values().iter().zip(mean.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(VarianceReport { variance: total / m as f64, micro_batch_count: m, batch_size, block: block.to_string() })
}

/// Split `0..batch` into `micro` equal contiguous ranges.
pub fn micro_batch_ranges(batch: usize, micro: usize) -> Result<Vec<Range<usize>>> {
    if micro < 2 {
        return Err(Error::Config(format!("need at least 2 micro-batches, got {micro}")));
    }
    if batch % micro != 0 {
        return Err(Error::Config(format!("batch size {batch} is not divisible into {micro} micro-batches")));
    }
    let size = batch / micro;
    Ok((0..micro).map(|m| m * size..(m + 1) * size).collect())
}
