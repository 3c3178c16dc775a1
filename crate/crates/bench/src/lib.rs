//! Shared fixtures for the benchmarks.

use segprompt_core::model::{Mllm, ModelConfig, Tokenizer};
use segprompt_core::nn::{seeded_rng, ParamStore};
use segprompt_core::prompt::{StudyInput, View, ViewInput};
use segprompt_core::synth::{synth_study, SynthSpec};

/// A multi-view synthetic study drawn with the default generator settings.
pub fn study(index: usize) -> StudyInput {
    let spec = SynthSpec {
        prior_prob: 1.0,
        lateral_prob: 1.0,
        ..SynthSpec::default()
    };
    let s = synth_study(&spec, index).expect("default spec is valid");
    let view = |v: View| {
        s.views
            .get(&v)
            .map(|(img, masks)| ViewInput::new(img.clone(), masks.clone()).expect("generator keeps extents"))
    };
    StudyInput {
        frontal: view(View::CurrentFrontal).expect("frontal is always drawn"),
        lateral: view(View::CurrentLateral),
        prior: view(View::PriorFrontal),
        context: s.context.clone(),
        findings: Some(s.findings.clone()),
    }
}

/// Toy model with a vocabulary covering the fixture's text.
pub fn toy_model(study: &StudyInput) -> (Mllm, ParamStore, Tokenizer) {
    let mut texts: Vec<String> = study.context.sections();
    texts.extend(study.findings.clone());
    let tok = Tokenizer::build(texts.iter().map(String::as_str));
    let mut store = ParamStore::new();
    let model =
        Mllm::new(&mut store, ModelConfig::toy(tok.vocab_size()), &mut seeded_rng(0)).expect("toy config is valid");
    (model, store, tok)
}
