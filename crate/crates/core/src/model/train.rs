//! Mini-batch AdamW training with a warmup-cosine schedule.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mllm::{FeatureCache, Mllm};
use super::tokenizer::Tokenizer;
use crate::error::{ensure, Error, Result};
use crate::nn::{adamw_step, seeded_rng, AdamWConfig, Grads, Graph, LrSchedule, OptimState, ParamStore};
use crate::prompt::{Prompt, PromptOptions, Strategy, StudyInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub single_view: bool,
    pub mask_aware: bool,
    /// Append the set-of-marks listing from each view's legend.
    #[serde(default)]
    pub som_listing: bool,
    #[serde(default)]
    pub adamw: AdamWConfig,
    /// Stops early after this many optimizer steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            lr: 2e-3,
            warmup_ratio: 0.03,
            batch_size: 8,
            seed: 0,
            strategy: Strategy::Ss,
            single_view: false,
            mask_aware: true,
            som_listing: false,
            adamw: AdamWConfig::default(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn prompt_options(&self) -> PromptOptions {
        PromptOptions::new(self.strategy)
            .single_view(self.single_view)
            .mask_aware(self.mask_aware)
    }

    pub fn total_steps(&self, examples: usize) -> usize {
        let per_epoch = examples.div_ceil(self.batch_size.max(1));
        let full = per_epoch * self.epochs;
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// One supervised item: a study, its realized prompt layout and target ids.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub study: StudyInput,
    pub prompt: Prompt,
    pub targets: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Loss and parameter gradients for one example.
pub fn example_grads(
    model: &Mllm,
    store: &ParamStore,
    tok: &Tokenizer,
    ex: &TrainExample,
    cache: Option<&FeatureCache>,
) -> Result<(f64, Grads)> {
    let mut g = Graph::new(store);
    let emb = model.embed_prompt(&mut g, tok, &ex.prompt, &ex.study, cache)?;
    let loss = model.forward_loss(&mut g, emb, &ex.targets)?;
    let value = g.value(loss).item()?;
    Ok((value, g.backward(loss)?.params()))
}

/// Mean loss of `examples` under the current weights.
pub fn evaluate_loss(model: &Mllm, store: &ParamStore, tok: &Tokenizer, examples: &[TrainExample]) -> Result<f64> {
    ensure!(!examples.is_empty(), "no examples to evaluate");
    let losses = examples
        .par_iter()
        .map(|ex| {
            let mut g = Graph::new(store);
            let emb = model.embed_prompt(&mut g, tok, &ex.prompt, &ex.study, None)?;
            let loss = model.forward_loss(&mut g, emb, &ex.targets)?;
            g.value(loss).item()
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains the non-frozen weights in place and returns the per-step losses.
///
/// Batch items run in parallel; their gradients are summed in item order so
/// the result does not depend on scheduling.
pub fn train(
    model: &Mllm,
    store: &mut ParamStore,
    tok: &Tokenizer,
    examples: &[TrainExample],
    tc: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    ensure!(!examples.is_empty(), "training set is empty");
    ensure!(
        tc.batch_size > 0 && tc.epochs > 0,
        "batch_size and epochs must be positive"
    );
    ensure!(
        tc.lr >= 0.0 && tc.lr.is_finite(),
        "learning rate must be finite and non-negative"
    );
    let total = tc.total_steps(examples.len());
    let schedule = LrSchedule::new(tc.lr, total, tc.warmup_ratio)?;
    let caches: Vec<Option<FeatureCache>> = if model.encoder_frozen(store) {
        examples
            .par_iter()
            .map(|ex| model.encode_views(store, &ex.study, &ex.prompt).map(Some))
            .collect::<Result<_>>()?
    } else {
        vec![None; examples.len()]
    };
    let mut state = OptimState::new(store, tc.adamw);
    let mut rng = seeded_rng(tc.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut records = Vec::with_capacity(total);
    let mut step = 0;
    'epochs: for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(tc.batch_size) {
            if step == total {
                break 'epochs;
            }
            let shared: &ParamStore = store;
            let results = batch
                .par_iter()
                .map(|&i| example_grads(model, shared, tok, &examples[i], caches[i].as_ref()))
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Grads::new(store.len());
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l;
                grads.merge(g);
            }
            let n = results.len() as f64;
            loss /= n;
            grads.scale(1.0 / n);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let lr = schedule.lr_at(step)?;
            adamw_step(store, &grads, &mut state, lr)?;
            records.push(LossRecord { step, lr, loss });
            if step % 25 == 0 || step + 1 == total {
                log::info!("epoch {epoch} step {step}/{total} lr {lr:.3e} loss {loss:.4}");
            }
            step += 1;
        }
    }
    Ok(records)
}
