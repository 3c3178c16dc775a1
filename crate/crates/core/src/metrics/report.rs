//! JSON metrics report with the scoring conventions spelled out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::{BootstrapResult, BootstrapSpec};
use super::lexical::ROUGE_BETA;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl From<BootstrapResult> for MetricSummary {
    fn from(r: BootstrapResult) -> Self {
        Self {
            median: r.median,
            ci_low: r.low,
            ci_high: r.high,
            n: r.n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub bleu_order: usize,
    pub bleu_smoothing: String,
    pub rouge_l_beta: f64,
    pub f1_zero_division: f64,
    pub empty_mask_scores: String,
    pub bootstrap_samples: usize,
    pub bootstrap_confidence: f64,
    pub bootstrap_statistic: String,
    pub labeler: String,
}

impl Conventions {
    pub fn new(spec: BootstrapSpec) -> Self {
        Self {
            bleu_order: 4,
            bleu_smoothing: "none".into(),
            rouge_l_beta: ROUGE_BETA,
            f1_zero_division: 0.0,
            empty_mask_scores: "undefined when both masks are empty; excluded from aggregates".into(),
            bootstrap_samples: spec.samples,
            bootstrap_confidence: spec.confidence,
            bootstrap_statistic: "metric recomputed per resample; median and percentile interval of the resamples"
                .into(),
            labeler: "keyword match per sentence with preceding negation".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, MetricSummary>,
    pub conventions: Conventions,
}

impl MetricsReport {
    pub fn new(spec: BootstrapSpec) -> Self {
        Self {
            metrics: BTreeMap::new(),
            conventions: Conventions::new(spec),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, r: BootstrapResult) {
        self.metrics.insert(name.into(), r.into());
    }
}
