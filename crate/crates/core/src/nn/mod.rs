//! Minimal deterministic numeric kernel: tensors, a reverse-mode tape, layers,
//! AdamW, the learning-rate schedule and a finite-difference oracle.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{check_param_grads, finite_diff_grad, finite_diff_param, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Activation, LayerNorm, Linear, Mlp, SelfAttention, TransformerBlock};
pub use optim::{adamw_step, AdamWConfig, LrSchedule, OptimState};
pub use params::{Grads, Param, ParamId, ParamStore};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate's only RNG type; every random draw goes through an explicit seed.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
