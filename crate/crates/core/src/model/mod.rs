//! Tiny encoder classifier (embeddings + 2 transformer layers + pooled
//! head), AdamW training loop, cross-entropy loss, and classification
//! metrics, runnable under three attention strategies: none / hard / soft.

mod checkpoint;
mod data;
mod encoder;
mod metrics;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use data::{load_tsv, prepare_dataset, DataError, Example, LabeledSentence};
pub use encoder::{cross_entropy, cross_entropy_with_grad, forward_one, ModelCache};
pub use metrics::{compute_metrics, evaluate, Metrics};
pub use params::{
    init_model, AdamMoments, EncoderLayerParams, LayerNormParams, LinearParams, ModelParams,
};
pub use train::{adamw_step, train, EpochRecord, TrainError, TrainState};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionConfig;

/// Which attention variant a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Unmodified full attention.
    None,
    /// Hard grammatical mask: disallowed pairs are blocked.
    Hard,
    /// Soft grammatical mask: preferred pairs get a positive bias.
    Soft,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::None => f.write_str("none"),
            Strategy::Hard => f.write_str("hard"),
            Strategy::Soft => f.write_str("soft"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Strategy::None),
            "hard" => Ok(Strategy::Hard),
            "soft" => Ok(Strategy::Soft),
            other => Err(format!("unknown strategy `{other}` (none|hard|soft)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
    pub strategy: Strategy,
}

impl ModelConfig {
    /// The bert-tiny shape: 2 layers, hidden 128, 2 heads, ffn 512.
    pub fn tiny(vocab_size: usize, strategy: Strategy) -> Self {
        ModelConfig {
            num_layers: 2,
            hidden: 128,
            num_heads: 2,
            ffn_dim: 512,
            vocab_size,
            max_len: 128,
            num_classes: 2,
            strategy,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hidden % self.num_heads != 0 {
            return Err(format!(
                "hidden {} not divisible by num_heads {}",
                self.hidden, self.num_heads
            ));
        }
        if self.num_layers == 0 || self.vocab_size == 0 || self.num_classes < 2 {
            return Err("num_layers, vocab_size, num_classes must be positive".into());
        }
        Ok(())
    }

    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            num_heads: self.num_heads,
            head_dim: self.hidden / self.num_heads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Desk-scale default for training from random init. The 2e-5 used for
    /// pretrained fine-tuning stays available through configuration.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Assert the zero-leakage invariant on every hard-masked forward.
    pub check_leakage: bool,
    /// Worker threads for within-batch data parallelism. Gradients are
    /// merged in sample order, so runs are deterministic per (seed, threads).
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            learning_rate: 1e-3,
            batch_size: 8,
            weight_decay: 0.01,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            check_leakage: true,
            threads: 1,
        }
    }
}
