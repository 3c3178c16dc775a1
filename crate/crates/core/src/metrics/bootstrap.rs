//! Percentile bootstrap over evaluation samples.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub samples: usize,
    pub confidence: f64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            samples: 500,
            confidence: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub median: f64,
    pub low: f64,
    pub high: f64,
    pub n: usize,
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Resamples item indices with replacement `spec.samples` times and evaluates
/// `statistic` on each resample. Reports the median and the central
/// `confidence` interval of the resulting distribution.
pub fn bootstrap_metric(
    n: usize,
    spec: BootstrapSpec,
    seed: u64,
    mut statistic: impl FnMut(&[usize]) -> f64,
) -> Result<BootstrapResult> {
    ensure!(n >= 1, "bootstrap needs at least one sample");
    ensure!(spec.samples >= 1, "bootstrap needs at least one resample");
    ensure!(
        spec.confidence > 0.0 && spec.confidence < 1.0,
        "confidence must lie in (0, 1)"
    );
    let mut rng = seeded_rng(seed);
    let mut idx = vec![0usize; n];
    let mut stats: Vec<f64> = (0..spec.samples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            statistic(&idx)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - spec.confidence) / 2.0;
    Ok(BootstrapResult {
        median: percentile(&stats, 0.5),
        low: percentile(&stats, tail),
        high: percentile(&stats, 1.0 - tail),
        n,
    })
}

/// Bootstrap of the mean of per-sample scores.
pub fn bootstrap_ci(scores: &[f64], spec: BootstrapSpec, seed: u64) -> Result<BootstrapResult> {
    bootstrap_metric(scores.len(), spec, seed, |idx| {
        // shifted by the first draw so constant inputs come back exactly
        let x0 = scores[idx[0]];
        x0 + idx.iter().map(|&i| scores[i] - x0).sum::<f64>() / idx.len() as f64
    })
}
