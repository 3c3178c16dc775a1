//! The assembled model: frozen encoder, seg-token extractor, image adapter,
//! optional width bridge and decoder LM.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lm::{DecoderLm, LmConfig};
use super::tokenizer::{Tokenizer, BOS, EOS};
use crate::encoder::{Encoded, EncodedVars, VitConfig, VitEncoder};
use crate::error::{ensure, Error, Result};
use crate::extractor::{ExtractorConfig, SegExtractor, SegTokenVars};
use crate::nn::{Activation, Graph, Linear, Mlp, ParamStore, Tensor, Var};
use crate::prompt::{realize_embeddings, Prompt, PromptSegment, StudyInput, View, ViewEmbeddings};

/// Cached encoder outputs per view, valid while the encoder is frozen.
pub type FeatureCache = BTreeMap<View, Encoded>;

pub const ADAPTER_LAYERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: VitConfig,
    pub extractor: ExtractorConfig,
    pub adapter_hidden: usize,
    pub lm: LmConfig,
}

impl ModelConfig {
    /// Small defaults that train in minutes on one core.
    pub fn toy(vocab_size: usize) -> Self {
        let encoder = VitConfig::default();
        Self {
            extractor: ExtractorConfig {
                dim: 64,
                feature_dim: encoder.dim,
                tap_layers: encoder.tap_layers.clone(),
                ..ExtractorConfig::default()
            },
            adapter_hidden: 64,
            lm: LmConfig {
                vocab_size,
                dim: 64,
                depth: 2,
                heads: 4,
                mlp_hidden: 128,
                max_seq_len: 512,
            },
            encoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.lm.validate()?;
        ensure!(
            self.extractor.feature_dim == self.encoder.dim,
            "extractor feature_dim {} must equal encoder dim {}",
            self.extractor.feature_dim,
            self.encoder.dim
        );
        ensure!(
            self.extractor
                .tap_layers
                .iter()
                .all(|t| self.encoder.tap_layers.contains(t)),
            "extractor taps {:?} are not all exposed by the encoder ({:?})",
            self.extractor.tap_layers,
            self.encoder.tap_layers
        );
        ensure!(self.adapter_hidden > 0, "adapter_hidden must be positive");
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Mllm {
    pub cfg: ModelConfig,
    pub encoder: VitEncoder,
    pub extractor: SegExtractor,
    pub adapter: Mlp,
    pub bridge: Option<Linear>,
    pub lm: DecoderLm,
}

impl Mllm {
    /// Registers every weight and freezes the encoder.
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = VitEncoder::new(store, cfg.encoder.clone(), rng)?;
        let extractor = SegExtractor::new(store, cfg.extractor.clone(), rng)?;
        let h = cfg.adapter_hidden;
        let adapter = Mlp::new(
            store,
            "adapter.mlp",
            &[cfg.encoder.dim, h, h, h, cfg.lm.dim],
            Activation::Gelu,
            rng,
        )?;
        let bridge = (cfg.extractor.dim != cfg.lm.dim)
            .then(|| Linear::new(store, "bridge.linear", cfg.extractor.dim, cfg.lm.dim, rng))
            .transpose()?;
        let lm = DecoderLm::new(store, cfg.lm.clone(), rng)?;
        encoder.set_frozen(store, true);
        Ok(Self {
            cfg,
            encoder,
            extractor,
            adapter,
            bridge,
            lm,
        })
    }

    pub fn encoder_frozen(&self, store: &ParamStore) -> bool {
        store.is_frozen(self.encoder.patch_embed.weight)
    }

    /// Encoder outputs for every view the prompt shows.
    pub fn encode_views(&self, store: &ParamStore, study: &StudyInput, prompt: &Prompt) -> Result<FeatureCache> {
        prompt_views(prompt)
            .into_iter()
            .map(|v| {
                let vi = study
                    .view(v)
                    .ok_or_else(|| Error::Contract(format!("prompt shows {v} but the study lacks it")))?;
                Ok((v, self.encoder.encode(store, &vi.image)?))
            })
            .collect()
    }

    /// One LM-width embedding per patch, row-major.
    pub fn adapt(&self, g: &mut Graph<'_>, final_grid: Var) -> Result<Var> {
        ensure!(
            g.shape(final_grid).last() == Some(&self.adapter.in_dim()),
            "feature width {:?} does not match adapter input {}",
            g.shape(final_grid),
            self.adapter.in_dim()
        );
        self.adapter.forward(g, final_grid)
    }

    fn bridge(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        match &self.bridge {
            Some(b) => b.forward(g, x),
            None => Ok(x),
        }
    }

    /// Realizes `prompt` as `[len, lm_dim]`. With a cache the encoder is
    /// bypassed; without one it runs inside the graph.
    pub fn embed_prompt(
        &self,
        g: &mut Graph<'_>,
        tok: &Tokenizer,
        prompt: &Prompt,
        study: &StudyInput,
        cache: Option<&FeatureCache>,
    ) -> Result<Var> {
        let patch = self.cfg.encoder.patch_size;
        let mut views = BTreeMap::new();
        for v in prompt_views(prompt) {
            let vi = study
                .view(v)
                .ok_or_else(|| Error::Contract(format!("prompt shows {v} but the study lacks it")))?;
            let enc = match cache.and_then(|c| c.get(&v)) {
                Some(e) => EncodedVars::from_encoded(g, e),
                None => self.encoder.forward(g, &vi.image)?,
            };
            let image = self.adapt(g, enc.final_grid)?;
            let mut tokens = Vec::new();
            if has_seg_slots(prompt, v) {
                for t in self.extractor.extract_vars(g, &enc, &vi.masks, patch)? {
                    tokens.push(SegTokenVars {
                        structure: t.structure,
                        mask: self.bridge(g, t.mask)?,
                        spatial: self.bridge(g, t.spatial)?,
                    });
                }
            }
            views.insert(v, ViewEmbeddings { image, tokens });
        }
        realize_embeddings(g, prompt, &views, |g, text| self.lm.embed_tokens(g, &tok.encode(text)))
    }

    /// Mean next-token cross-entropy over `targets` followed by EOS; prompt
    /// positions are never scored.
    pub fn forward_loss(&self, g: &mut Graph<'_>, prompt_emb: Var, targets: &[usize]) -> Result<Var> {
        let lp = g.shape(prompt_emb)[0];
        let total = lp + targets.len() + 1;
        ensure!(
            total <= self.cfg.lm.max_seq_len,
            "prompt ({lp}) + target ({}) + BOS exceeds max_seq_len {}",
            targets.len(),
            self.cfg.lm.max_seq_len
        );
        let mut input = vec![BOS];
        input.extend_from_slice(targets);
        let tgt = self.lm.embed_tokens(g, &input)?.expect("BOS is always present");
        let x = g.concat_rows(&[prompt_emb, tgt])?;
        let h = self.lm.hidden(g, x)?;
        let rows: Vec<usize> = (lp..total).collect();
        let h = g.gather_rows(h, &rows)?;
        let logits = self.lm.logits(g, h)?;
        let pairs: Vec<(usize, usize)> = target_rows(0, targets);
        g.cross_entropy(logits, &pairs)
    }

    /// Greedy decoding from a constant prompt embedding.
    pub fn generate(&self, store: &ParamStore, prompt_emb: &Tensor, max_new: usize) -> Result<Vec<usize>> {
        let dim = self.cfg.lm.dim;
        ensure!(prompt_emb.last_dim() == dim, "prompt width must equal LM dim {dim}");
        let mut seq = prompt_emb.data().to_vec();
        let table = store.value(self.lm.tok_emb);
        seq.extend_from_slice(table.row(BOS));
        let mut out = Vec::new();
        for _ in 0..max_new {
            let len = seq.len() / dim;
            if len > self.cfg.lm.max_seq_len {
                break;
            }
            let x = Tensor::matrix(len, dim, seq.clone())?;
            let logits = self.lm.next_logits(store, &x)?;
            let next = argmax(&logits);
            if next == EOS {
                break;
            }
            out.push(next);
            seq.extend_from_slice(table.row(next));
        }
        Ok(out)
    }
}

/// `(row, class)` pairs scoring `targets ++ [EOS]` from row `lp` onward.
pub fn target_rows(lp: usize, targets: &[usize]) -> Vec<(usize, usize)> {
    targets
        .iter()
        .copied()
        .chain([EOS])
        .enumerate()
        .map(|(i, t)| (lp + i, t))
        .collect()
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn prompt_views(prompt: &Prompt) -> Vec<View> {
    prompt
        .segments
        .iter()
        .filter_map(|s| match s {
            PromptSegment::Image { view } => Some(*view),
            _ => None,
        })
        .collect()
}

fn has_seg_slots(prompt: &Prompt, v: View) -> bool {
    prompt
        .segments
        .iter()
        .any(|s| matches!(s, PromptSegment::Seg { view, .. } | PromptSegment::CombinedSeg { view, .. } if *view == v))
}
