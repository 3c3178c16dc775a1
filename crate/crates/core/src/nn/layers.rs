use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    /// Pass-through; used to make analytic test configurations exact.
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Gelu => g.gelu(x),
            Activation::Identity => x,
        }
    }
}

/// Affine map `y = W·x + b` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers `{name}.weight` and `{name}.bias`, uniform in `±1/√in_dim`.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        ensure!(in_dim > 0 && out_dim > 0, "linear `{name}` needs positive dims");
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), &[out_dim, in_dim], bound, rng)?;
        let bias = store.add_uniform(format!("{name}.bias"), &[out_dim], bound, rng)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        g.linear(x, w, Some(b))
    }

    /// Evaluates the layer on a plain tensor without recording gradients.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(store);
        let xv = g.input(x.clone().with_requires_grad(false));
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    /// Sets `W = I` (square layers only) and `b = 0`.
    pub fn set_identity(&self, store: &mut ParamStore) -> Result<()> {
        ensure!(self.in_dim == self.out_dim, "identity needs a square layer");
        let n = self.in_dim;
        let mut w = vec![0.0; n * n];
        (0..n).for_each(|i| w[i * n + i] = 1.0);
        store.set_values(self.weight, &w)?;
        store.set_values(self.bias, &vec![0.0; n])
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims` lists layer widths end to end, e.g. `[in, hidden, out]` is two layers.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(dims.len() >= 2, "mlp `{name}` needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, g: &mut Graph<'_>, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = self.activation.apply(g, x);
            }
            x = layer.forward(g, x)?;
        }
        Ok(x)
    }

    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(store);
        let xv = g.input(x.clone().with_requires_grad(false));
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    pub fn set_identity(&self, store: &mut ParamStore) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.set_identity(store))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::new(vec![dim], vec![1.0; dim])?)?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        Ok(Self { gamma, beta, eps: 1e-5 })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma)?;
        let beta = g.param(self.beta)?;
        g.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Multi-head self-attention over a `[seq, dim]` sequence.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub causal: bool,
}

impl SelfAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        causal: bool,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(
            heads > 0 && dim.is_multiple_of(heads),
            "heads ({heads}) must divide dim ({dim})"
        );
        Ok(Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng)?,
            heads,
            causal,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let dim = self.out.in_dim;
        let hd = dim / self.heads;
        let qkv = self.qkv.forward(g, x)?;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = g.slice_cols(qkv, h * hd, hd)?;
            let k = g.slice_cols(qkv, dim + h * hd, hd)?;
            let v = g.slice_cols(qkv, 2 * dim + h * hd, hd)?;
            let scores = g.matmul_nt(q, k)?;
            let scores = g.scale(scores, scale);
            let p = g.softmax(scores, self.causal)?;
            heads.push(g.matmul(p, v)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        self.out.forward(g, cat)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        causal: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim)?,
            attn: SelfAttention::new(store, &format!("{name}.attn"), dim, heads, causal, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim)?,
            mlp: Mlp::new(
                store,
                &format!("{name}.mlp"),
                &[dim, hidden, dim],
                Activation::Gelu,
                rng,
            )?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let h = self.attn.forward(g, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.mlp.forward(g, h)?;
        g.add(x, h)
    }
}
