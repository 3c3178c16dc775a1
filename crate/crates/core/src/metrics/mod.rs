//! Evaluation metrics: mask overlap, finding-level F1, lexical scores and
//! bootstrap confidence intervals.

mod bootstrap;
mod labels;
mod lexical;
mod report;
mod seg;

pub use bootstrap::{bootstrap_ci, bootstrap_metric, percentile, BootstrapResult, BootstrapSpec};
pub use labels::{label_text, macro_micro_f1, Confusion, F1Scores, Finding, LabelVector};
pub use lexical::{bleu, corpus_bleu, rouge_l, tokenize_words, ROUGE_BETA};
pub use report::{Conventions, MetricSummary, MetricsReport};
pub use seg::{cl_dice, dice, skeletonize};
