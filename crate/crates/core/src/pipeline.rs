//! Glue between a dataset on disk and the model: prompt construction,
//! example loading, greedy report generation and evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::manifest::{Manifest, Split, StudyRecord};
use crate::metrics::{
    bootstrap_ci, bootstrap_metric, corpus_bleu, label_text, macro_micro_f1, rouge_l, tokenize_words, BootstrapSpec,
    Finding, LabelVector, MetricsReport,
};
use crate::model::{Mllm, Tokenizer, TrainExample};
use crate::nn::{Graph, ParamStore};
use crate::prompt::{build_prompt, Prompt, PromptOptions, View};
use crate::som::augment_som_prompt;

/// Default decoding budget in tokens.
pub const MAX_NEW_TOKENS: usize = 96;

/// Every free text in the corpus, for building the vocabulary.
pub fn corpus_texts(manifest: &Manifest) -> Vec<String> {
    manifest
        .studies
        .iter()
        .flat_map(|s| std::iter::once(s.findings.clone()).chain(s.context.sections()))
        .collect()
}

pub fn build_tokenizer(manifest: &Manifest) -> Tokenizer {
    let texts = corpus_texts(manifest);
    Tokenizer::build(texts.iter().map(String::as_str))
}

/// Prompt for one record; `som_listing` appends the marks of the frontal overlay.
pub fn record_prompt(
    rec: &StudyRecord,
    study: &crate::prompt::StudyInput,
    opts: PromptOptions,
    som_listing: bool,
) -> Result<Prompt> {
    let p = build_prompt(study, opts)?;
    Ok(if som_listing {
        augment_som_prompt(&p, rec.legend(View::CurrentFrontal))
    } else {
        p
    })
}

/// Loads the records of `split` (all records when `None`) as supervised examples.
pub fn load_examples(
    manifest: &Manifest,
    dir: &Path,
    split: Option<Split>,
    tok: &Tokenizer,
    opts: PromptOptions,
    som_listing: bool,
) -> Result<Vec<(String, TrainExample)>> {
    manifest
        .studies
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .map(|rec| {
            let study = rec.load(dir)?;
            let prompt = record_prompt(rec, &study, opts, som_listing)?;
            let targets = tok.encode(&rec.findings);
            Ok((rec.id.clone(), TrainExample { study, prompt, targets }))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub reference: String,
    pub generated: String,
}

pub fn generate_report(
    model: &Mllm,
    store: &ParamStore,
    tok: &Tokenizer,
    ex: &TrainExample,
    max_new: usize,
) -> Result<String> {
    let mut g = Graph::new(store);
    let emb = model.embed_prompt(&mut g, tok, &ex.prompt, &ex.study, None)?;
    let ids = model.generate(store, g.value(emb), max_new)?;
    Ok(tok.decode(&ids))
}

/// Greedy reports for every example, in input order.
pub fn predict(
    model: &Mllm,
    store: &ParamStore,
    tok: &Tokenizer,
    examples: &[(String, TrainExample)],
    max_new: usize,
) -> Result<Vec<Prediction>> {
    examples
        .par_iter()
        .map(|(id, ex)| {
            Ok(Prediction {
                id: id.clone(),
                reference: tok.decode(&ex.targets),
                generated: generate_report(model, store, tok, ex, max_new)?,
            })
        })
        .collect()
}

/// Micro F1 over the mask-relevant findings.
pub fn mask_relevant_micro_f1(preds: &[Prediction]) -> Result<f64> {
    let (p, g) = label_pairs(preds);
    Ok(macro_micro_f1(&p, &g)?.micro_f1)
}

fn label_pairs(preds: &[Prediction]) -> (Vec<LabelVector>, Vec<LabelVector>) {
    preds
        .iter()
        .map(|p| {
            (
                label_text(&p.generated, &Finding::MASK_RELEVANT),
                label_text(&p.reference, &Finding::MASK_RELEVANT),
            )
        })
        .unzip()
}

/// BLEU-4, ROUGE-L and mask-relevant F1, each with a bootstrap interval.
/// Lexical scores are on a 0 to 100 scale, F1 on 0 to 1.
pub fn evaluate_predictions(preds: &[Prediction], spec: BootstrapSpec, seed: u64) -> Result<MetricsReport> {
    let words: Vec<(Vec<String>, Vec<String>)> = preds
        .iter()
        .map(|p| (tokenize_words(&p.generated), tokenize_words(&p.reference)))
        .collect();
    let rouge: Vec<f64> = words.iter().map(|(c, r)| rouge_l(c, r)).collect();
    let (pl, gl) = label_pairs(preds);
    let n = preds.len();
    let pick = |idx: &[usize], xs: &[LabelVector]| idx.iter().map(|&i| xs[i].clone()).collect::<Vec<_>>();
    let f1 = |idx: &[usize]| macro_micro_f1(&pick(idx, &pl), &pick(idx, &gl)).expect("aligned label vectors");

    let mut report = MetricsReport::new(spec);
    report.insert(
        "bleu4",
        bootstrap_metric(n, spec, seed, |idx| {
            let sample: Vec<_> = idx.iter().map(|&i| words[i].clone()).collect();
            corpus_bleu(&sample, 4)
        })?,
    );
    report.insert("rouge_l", bootstrap_ci(&rouge, spec, seed)?);
    report.insert("f1_mr_micro", bootstrap_metric(n, spec, seed, |idx| f1(idx).micro_f1)?);
    report.insert("f1_mr_macro", bootstrap_metric(n, spec, seed, |idx| f1(idx).macro_f1)?);
    Ok(report)
}
