//! Small ViT-style patch encoder with tapped intermediate layers.
//!
//! Taps read the residual stream after the indexed block (1-based), before
//! any normalisation. The final grid handed to the adapter is the last block's
//! output after the closing layer norm. There is no CLS token: every grid cell
//! is a patch with a spatial footprint.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::nn::{Graph, LayerNorm, Linear, ParamId, ParamStore, Tensor, TransformerBlock, Var};
use crate::pgm::GrayImage;

pub const ENCODER_PREFIX: &str = "encoder.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// 1-based block indices whose outputs are exposed.
    pub tap_layers: Vec<usize>,
    /// Where taps are read; informational, always `"post_block_residual"`.
    #[serde(default = "default_tap_point")]
    pub tap_point: String,
}

fn default_tap_point() -> String {
    "post_block_residual".to_string()
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 16,
            depth: 8,
            dim: 64,
            heads: 4,
            mlp_hidden: 128,
            tap_layers: vec![2, 4, 6, 8],
            tap_point: default_tap_point(),
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.patch_size > 0, "patch_size must be positive");
        ensure!(
            self.image_size.is_multiple_of(self.patch_size),
            "image_size {} not divisible by patch_size {}",
            self.image_size,
            self.patch_size
        );
        ensure!(self.depth > 0 && self.dim > 0, "depth and dim must be positive");
        ensure!(
            self.heads > 0 && self.dim.is_multiple_of(self.heads),
            "heads {} must divide dim {}",
            self.heads,
            self.dim
        );
        ensure!(!self.tap_layers.is_empty(), "at least one tap layer is required");
        ensure!(
            self.tap_layers.iter().all(|&t| t >= 1 && t <= self.depth),
            "tap layers {:?} must lie in 1..={}",
            self.tap_layers,
            self.depth
        );
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn grid_cells(&self) -> usize {
        self.grid_side() * self.grid_side()
    }
}

/// Per-cell feature vectors on the patch lattice, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub features: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, features: Vec<f64>) -> Result<Self> {
        ensure!(
            features.len() == rows * cols * dim,
            "feature grid {rows}x{cols}x{dim} needs {} values, got {}",
            rows * cols * dim,
            features.len()
        );
        Ok(Self {
            rows,
            cols,
            dim,
            features,
        })
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// `[cells, dim]` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.num_cells(), self.dim], self.features.clone()).expect("consistent grid")
    }

    fn from_value(rows: usize, cols: usize, t: &Tensor) -> Self {
        Self {
            rows,
            cols,
            dim: t.last_dim(),
            features: t.data().to_vec(),
        }
    }
}

/// Encoder outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub taps: BTreeMap<usize, FeatureGrid>,
    pub final_grid: FeatureGrid,
}

/// Encoder outputs as graph nodes, so downstream consumers stay differentiable.
#[derive(Clone, Debug)]
pub struct EncodedVars {
    pub rows: usize,
    pub cols: usize,
    pub taps: BTreeMap<usize, Var>,
    pub final_grid: Var,
}

impl EncodedVars {
    /// Inserts precomputed features as constant leaves.
    pub fn from_encoded(g: &mut Graph<'_>, enc: &Encoded) -> Self {
        let taps = enc.taps.iter().map(|(&k, fg)| (k, g.input(fg.to_tensor()))).collect();
        let final_grid = g.input(enc.final_grid.to_tensor());
        Self {
            rows: enc.final_grid.rows,
            cols: enc.final_grid.cols,
            taps,
            final_grid,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VitEncoder {
    pub cfg: VitConfig,
    pub patch_embed: Linear,
    pub pos: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_ln: LayerNorm,
}

impl VitEncoder {
    /// Registers randomly initialised weights under `encoder.`.
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: VitConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let p2 = cfg.patch_size * cfg.patch_size;
        let patch_embed = Linear::new(store, "encoder.patch_embed", p2, cfg.dim, rng)?;
        let pos = store.add_uniform("encoder.pos", &[cfg.grid_cells(), cfg.dim], 0.1, rng)?;
        let blocks = (0..cfg.depth)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("encoder.block{}", i + 1),
                    cfg.dim,
                    cfg.heads,
                    cfg.mlp_hidden,
                    false,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let final_ln = LayerNorm::new(store, "encoder.final_ln", cfg.dim)?;
        Ok(Self {
            cfg,
            patch_embed,
            pos,
            blocks,
            final_ln,
        })
    }

    /// Marks every encoder weight frozen: forward is unchanged, the optimizer
    /// never touches them, and graphs treat them as constants.
    pub fn set_frozen(&self, store: &mut ParamStore, frozen: bool) {
        store.set_frozen_prefix(ENCODER_PREFIX, frozen);
    }

    /// Flattens the image into `[cells, patch²]`, patches row-major.
    pub fn patchify(&self, image: &GrayImage) -> Result<Tensor> {
        let s = self.cfg.image_size;
        ensure!(
            image.extents() == (s, s),
            "encoder expects a {s}x{s} image, got {:?}",
            image.extents()
        );
        let p = self.cfg.patch_size;
        let side = self.cfg.grid_side();
        let unit = image.to_unit();
        let mut out = Vec::with_capacity(s * s);
        for pr in 0..side {
            for pc in 0..side {
                for r in 0..p {
                    let row = (pr * p + r) * s + pc * p;
                    out.extend_from_slice(&unit[row..row + p]);
                }
            }
        }
        Tensor::new(vec![side * side, p * p], out)
    }

    pub fn forward(&self, g: &mut Graph<'_>, image: &GrayImage) -> Result<EncodedVars> {
        let patches = g.input(self.patchify(image)?);
        let x = self.patch_embed.forward(g, patches)?;
        let pos = g.param(self.pos)?;
        let mut x = g.add(x, pos)?;
        let mut taps = BTreeMap::new();
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, x)?;
            if self.cfg.tap_layers.contains(&(i + 1)) {
                taps.insert(i + 1, x);
            }
        }
        let final_grid = self.final_ln.forward(g, x)?;
        let side = self.cfg.grid_side();
        Ok(EncodedVars {
            rows: side,
            cols: side,
            taps,
            final_grid,
        })
    }

    /// Runs the encoder outside any training graph.
    pub fn encode(&self, store: &ParamStore, image: &GrayImage) -> Result<Encoded> {
        let mut g = Graph::new(store);
        let vars = self.forward(&mut g, image)?;
        let side = self.cfg.grid_side();
        let taps = vars
            .taps
            .iter()
            .map(|(&k, &v)| (k, FeatureGrid::from_value(side, side, g.value(v))))
            .collect();
        let final_grid = FeatureGrid::from_value(side, side, g.value(vars.final_grid));
        Ok(Encoded { taps, final_grid })
    }

    /// Encodes each image independently.
    pub fn encode_batch(&self, store: &ParamStore, images: &[GrayImage]) -> Result<Vec<Encoded>> {
        images.iter().map(|im| self.encode(store, im)).collect()
    }
}
