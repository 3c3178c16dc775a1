//! Decoder-only transformer LM over an embedding sequence.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{Graph, LayerNorm, Linear, ParamId, ParamStore, Tensor, TransformerBlock, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub max_seq_len: usize,
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.vocab_size > 4, "vocabulary must extend past the special tokens");
        ensure!(self.dim > 0 && self.depth > 0, "LM dim and depth must be positive");
        ensure!(
            self.heads > 0 && self.dim.is_multiple_of(self.heads),
            "heads {} must divide LM dim {}",
            self.heads,
            self.dim
        );
        ensure!(self.max_seq_len > 1, "max_seq_len must exceed 1");
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLm {
    pub cfg: LmConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_ln: LayerNorm,
    pub head: Linear,
}

impl DecoderLm {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: LmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let tok_emb = store.add_uniform("lm.tok_emb", &[cfg.vocab_size, cfg.dim], 0.5, rng)?;
        let pos_emb = store.add_uniform("lm.pos_emb", &[cfg.max_seq_len, cfg.dim], 0.1, rng)?;
        let blocks = (0..cfg.depth)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("lm.block{}", i + 1),
                    cfg.dim,
                    cfg.heads,
                    cfg.mlp_hidden,
                    true,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let final_ln = LayerNorm::new(store, "lm.final_ln", cfg.dim)?;
        let head = Linear::new(store, "lm.head", cfg.dim, cfg.vocab_size, rng)?;
        Ok(Self {
            cfg,
            tok_emb,
            pos_emb,
            blocks,
            final_ln,
            head,
        })
    }

    /// `[ids.len(), dim]` token embeddings; `None` for an empty id list.
    pub fn embed_tokens(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Option<Var>> {
        if ids.is_empty() {
            return Ok(None);
        }
        ensure!(
            ids.iter().all(|&i| i < self.cfg.vocab_size),
            "token id out of range for vocabulary of {}",
            self.cfg.vocab_size
        );
        let table = g.param(self.tok_emb)?;
        g.gather_rows(table, ids).map(Some)
    }

    /// Final hidden states `[len, dim]` of a causal pass over `x`.
    pub fn hidden(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let len = g.shape(x)[0];
        ensure!(
            len <= self.cfg.max_seq_len,
            "sequence of {len} positions exceeds max_seq_len {}",
            self.cfg.max_seq_len
        );
        let table = g.param(self.pos_emb)?;
        let pos = g.gather_rows(table, &(0..len).collect::<Vec<_>>())?;
        let mut h = g.add(x, pos)?;
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        self.final_ln.forward(g, h)
    }

    pub fn logits(&self, g: &mut Graph<'_>, hidden: Var) -> Result<Var> {
        self.head.forward(g, hidden)
    }

    /// Next-token logits for the last position of a constant sequence.
    pub fn next_logits(&self, store: &ParamStore, x: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let xv = g.input(x.clone());
        let h = self.hidden(&mut g, xv)?;
        let last = g.gather_rows(h, &[x.rows() - 1])?;
        let l = self.logits(&mut g, last)?;
        Ok(g.value(l).data().to_vec())
    }
}
