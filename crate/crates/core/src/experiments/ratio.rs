use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::train::ExperimentResult;

/// Post-shift loss ratio of a baseline run over a regularized run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub ratio: f64,
    /// Ratio of cumulative post-shift sums, one entry per post-shift step.
    pub ratio_series: Vec<f64>,
    pub quartiles: (f64, f64, f64),
}

/// `vanilla.post_shift_mse_sum / other.post_shift_mse_sum`; values above 1
/// mean the regularized run adapted better.
pub fn loss_ratio(vanilla: &ExperimentResult, other: &ExperimentResult) -> Result<RatioReport> {
    if vanilla.shift_index != other.shift_index || vanilla.steps() != other.steps() {
        return Err(Error::InvalidConfig(format!(
            "runs are not comparable: shift {} vs {}, length {} vs {}",
            vanilla.shift_index,
            other.shift_index,
            vanilla.steps(),
            other.steps()
        )));
    }
    if other.post_shift_mse_sum == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let ratio = vanilla.post_shift_mse_sum / other.post_shift_mse_sum;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut ratio_series = Vec::with_capacity(vanilla.steps().saturating_sub(vanilla.shift_index));
    for (a, b) in vanilla.per_step_mse[vanilla.shift_index..]
        .iter()
        .zip(&other.per_step_mse[other.shift_index..])
    {
        num += a;
        den += b;
        ratio_series.push(if den == 0.0 { f64::NAN } else { num / den });
    }
    Ok(RatioReport {
        ratio,
        ratio_series,
        quartiles: (ratio, ratio, ratio),
    })
}

/// Mean and quartiles over matched-seed ratios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub n: usize,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn summarize(values: &[f64]) -> RatioSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    RatioSummary {
        mean,
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        n: values.len(),
    }
}
