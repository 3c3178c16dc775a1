//! Segmentation tokens extractor.
//!
//! Each positive structure mask yields two vectors:
//!
//! * **mask token**: the mask is pooled over every tapped encoder layer (mean of
//!   the patch features under the mask), each pooled vector goes through its
//!   own linear projection, the projections are summed, and a small MLP fuses
//!   the result.
//! * **spatial token**: the full-resolution mask is resampled to a fixed
//!   `S × S` raster, flattened row-major and linearly projected.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncodedVars, FeatureGrid};
use crate::error::{ensure, Error, Result};
use crate::masks::{BinaryMask, GridMask, MaskSet, StructureId};
use crate::nn::{Activation, Graph, Linear, Mlp, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Token width.
    pub dim: usize,
    /// Width of the encoder features being pooled.
    pub feature_dim: usize,
    pub tap_layers: Vec<usize>,
    pub spatial_side: usize,
    pub mlp_depth: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            feature_dim: 64,
            tap_layers: vec![2, 4, 6, 8],
            spatial_side: 32,
            mlp_depth: 2,
            activation: Activation::Gelu,
        }
    }
}

/// Mask and spatial token for one structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegTokenPair {
    pub structure: StructureId,
    pub mask_token: Vec<f64>,
    pub spatial_token: Vec<f64>,
}

/// Graph-resident token pair, each a `[1, dim]` node.
#[derive(Clone, Copy, Debug)]
pub struct SegTokenVars {
    pub structure: StructureId,
    pub mask: Var,
    pub spatial: Var,
}

/// Mean of the feature vectors of `fg` over the set cells of `gm`.
pub fn mask_pool(fg: &FeatureGrid, gm: &GridMask) -> Result<Vec<f64>> {
    let mut g = Graph::detached();
    let x = g.input(fg.to_tensor());
    let v = mask_pool_var(&mut g, x, fg.rows, fg.cols, gm)?;
    Ok(g.value(v).data().to_vec())
}

/// In-graph mask pooling over a `[rows·cols, d]` feature node.
pub fn mask_pool_var(g: &mut Graph<'_>, features: Var, rows: usize, cols: usize, gm: &GridMask) -> Result<Var> {
    ensure!(
        (gm.rows(), gm.cols()) == (rows, cols),
        "grid mask {}x{} does not match feature grid {rows}x{cols}",
        gm.rows(),
        gm.cols()
    );
    let cells = gm.set_cells();
    ensure!(!cells.is_empty(), "mask pooling over an empty grid mask");
    g.mean_rows(features, &cells)
}

#[derive(Clone, Debug)]
pub struct SegExtractor {
    pub cfg: ExtractorConfig,
    pub taps: Vec<(usize, Linear)>,
    pub fusion: Mlp,
    pub spatial: Linear,
}

impl SegExtractor {
    /// Registers weights as `seg.tap{k}.linear`, `seg.fusion.mlp` and `seg.spatial.linear`.
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: ExtractorConfig, rng: &mut R) -> Result<Self> {
        ensure!(!cfg.tap_layers.is_empty(), "extractor needs at least one tap layer");
        ensure!(cfg.dim > 0 && cfg.feature_dim > 0, "extractor dims must be positive");
        ensure!(cfg.spatial_side > 0, "spatial_side must be positive");
        ensure!(cfg.mlp_depth >= 1, "fusion MLP needs at least one layer");
        let taps = cfg
            .tap_layers
            .iter()
            .map(|&k| {
                Ok((
                    k,
                    Linear::new(store, &format!("seg.tap{k}.linear"), cfg.feature_dim, cfg.dim, rng)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let dims = vec![cfg.dim; cfg.mlp_depth + 1];
        let fusion = Mlp::new(store, "seg.fusion.mlp", &dims, cfg.activation, rng)?;
        let s2 = cfg.spatial_side * cfg.spatial_side;
        let spatial = Linear::new(store, "seg.spatial.linear", s2, cfg.dim, rng)?;
        Ok(Self {
            cfg,
            taps,
            fusion,
            spatial,
        })
    }

    /// Identity tap projections and identity fusion layers; only valid when
    /// `feature_dim == dim`. Combine with `Activation::Identity` for an exact
    /// pass-through MLP.
    pub fn set_identity(&self, store: &mut ParamStore) -> Result<()> {
        for (_, l) in &self.taps {
            l.set_identity(store)?;
        }
        self.fusion.set_identity(store)
    }

    pub fn mask_token_var(&self, g: &mut Graph<'_>, enc: &EncodedVars, gm: &GridMask) -> Result<Var> {
        let mut projected = Vec::with_capacity(self.taps.len());
        for (k, linear) in &self.taps {
            let features = *enc
                .taps
                .get(k)
                .ok_or_else(|| Error::Contract(format!("encoder output lacks tap layer {k}")))?;
            let pooled = mask_pool_var(g, features, enc.rows, enc.cols, gm)?;
            projected.push(linear.forward(g, pooled)?);
        }
        let summed = g.add_all(&projected)?;
        self.fusion.forward(g, summed)
    }

    /// Resamples to `S × S` and flattens row-major.
    pub fn spatial_input(&self, mask: &BinaryMask) -> Result<Tensor> {
        ensure!(mask.is_positive(), "spatial token requested for an empty mask");
        let s = self.cfg.spatial_side;
        let flat = mask.resample_any(s).pixels().iter().map(|&p| f64::from(p)).collect();
        Tensor::new(vec![1, s * s], flat)
    }

    pub fn spatial_token_var(&self, g: &mut Graph<'_>, mask: &BinaryMask) -> Result<Var> {
        let x = g.input(self.spatial_input(mask)?);
        self.spatial.forward(g, x)
    }

    /// One token pair per positive mask, in canonical structure order.
    pub fn extract_vars(
        &self,
        g: &mut Graph<'_>,
        enc: &EncodedVars,
        masks: &MaskSet,
        patch: usize,
    ) -> Result<Vec<SegTokenVars>> {
        masks
            .positives()
            .map(|(structure, m)| {
                let gm = m.to_grid(patch)?;
                Ok(SegTokenVars {
                    structure,
                    mask: self.mask_token_var(g, enc, &gm)?,
                    spatial: self.spatial_token_var(g, m)?,
                })
            })
            .collect()
    }

    pub fn mask_token(
        &self,
        store: &ParamStore,
        features: &BTreeMap<usize, FeatureGrid>,
        gm: &GridMask,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let enc = detached_taps(&mut g, features)?;
        let v = self.mask_token_var(&mut g, &enc, gm)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn spatial_token(&self, store: &ParamStore, mask: &BinaryMask) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let v = self.spatial_token_var(&mut g, mask)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn extract_tokens(
        &self,
        store: &ParamStore,
        features: &BTreeMap<usize, FeatureGrid>,
        masks: &MaskSet,
        patch: usize,
    ) -> Result<Vec<SegTokenPair>> {
        let mut g = Graph::new(store);
        let enc = detached_taps(&mut g, features)?;
        let vars = self.extract_vars(&mut g, &enc, masks, patch)?;
        Ok(vars
            .into_iter()
            .map(|t| SegTokenPair {
                structure: t.structure,
                mask_token: g.value(t.mask).data().to_vec(),
                spatial_token: g.value(t.spatial).data().to_vec(),
            })
            .collect())
    }
}

fn detached_taps(g: &mut Graph<'_>, features: &BTreeMap<usize, FeatureGrid>) -> Result<EncodedVars> {
    let first = features
        .values()
        .next()
        .ok_or_else(|| Error::Contract("no tapped features supplied".into()))?;
    let (rows, cols) = (first.rows, first.cols);
    let mut taps = BTreeMap::new();
    for (&k, fg) in features {
        ensure!((fg.rows, fg.cols) == (rows, cols), "tap {k} grid differs in extent");
        taps.insert(k, g.input(fg.to_tensor()));
    }
    let final_grid = *taps.values().next().unwrap();
    Ok(EncodedVars {
        rows,
        cols,
        taps,
        final_grid,
    })
}
