//! Trainable report generator: tokenizer, adapter, decoder LM, training loop
//! and greedy decoding.

mod io;
mod lm;
mod mllm;
mod tokenizer;
mod train;

pub use io::{
    load_dir, loss_csv, save_dir, LOSS_FILE, MODEL_CONFIG_FILE, TOKENIZER_FILE, TRAIN_CONFIG_FILE, WEIGHTS_FILE,
};
pub use lm::{DecoderLm, LmConfig};
pub use mllm::{target_rows, FeatureCache, Mllm, ModelConfig, ADAPTER_LAYERS};
pub use tokenizer::{template_texts, Tokenizer, BOS, EOS, PAD, UNK};
pub use train::{evaluate_loss, example_grads, train, LossRecord, TrainConfig, TrainExample};
