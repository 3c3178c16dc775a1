//! Checkpoint directories: weights, configs, tokenizer and loss curve.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::mllm::{Mllm, ModelConfig};
use super::tokenizer::Tokenizer;
use super::train::{LossRecord, TrainConfig};
use crate::error::{file_err, Result};
use crate::nn::{checkpoint, seeded_rng, ParamStore};

pub const WEIGHTS_FILE: &str = "model.ckpt";
pub const MODEL_CONFIG_FILE: &str = "model.json";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const LOSS_FILE: &str = "loss.csv";

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in records {
        let _ = writeln!(s, "{},{:e},{}", r.step, r.lr, r.loss);
    }
    s
}

fn write_json(path: PathBuf, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(&path, serde_json::to_string_pretty(value)?).map_err(file_err(&path))
}

/// Writes everything needed to reload and audit a trained model.
pub fn save_dir(
    dir: &Path,
    store: &ParamStore,
    model: &Mllm,
    tok: &Tokenizer,
    tc: Option<&TrainConfig>,
    losses: &[LossRecord],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(file_err(dir))?;
    checkpoint::save_store(store, &dir.join(WEIGHTS_FILE))?;
    write_json(dir.join(MODEL_CONFIG_FILE), &model.cfg)?;
    tok.save(&dir.join(TOKENIZER_FILE))?;
    if let Some(tc) = tc {
        write_json(dir.join(TRAIN_CONFIG_FILE), tc)?;
    }
    let loss_path = dir.join(LOSS_FILE);
    std::fs::write(&loss_path, loss_csv(losses)).map_err(file_err(&loss_path))
}

/// Rebuilds the model from its config and loads the stored weights.
pub fn load_dir(dir: &Path) -> Result<(Mllm, ParamStore, Tokenizer)> {
    let cfg_path = dir.join(MODEL_CONFIG_FILE);
    let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(&cfg_path).map_err(file_err(&cfg_path))?)?;
    let tok = Tokenizer::load(&dir.join(TOKENIZER_FILE))?;
    let mut store = ParamStore::new();
    let model = Mllm::new(&mut store, cfg, &mut seeded_rng(0))?;
    checkpoint::load_into(&mut store, &dir.join(WEIGHTS_FILE))?;
    Ok((model, store, tok))
}
