//! Grammatically-guided sparse attention: POS-rule-driven attention masks,
//! subword/POS alignment, dense and sparse attention kernels with analytic
//! backward passes, and a tiny trainable encoder to exercise them.
//!
//! The pipeline is: tag words with POS tags, tokenize into subwords while
//! preserving character offsets, align the word tags onto subword tokens
//! ([`tokenize`]), turn the per-token tag list into an additive attention
//! bias matrix under a [`pos::RuleSet`] ([`mask`]), and inject that bias
//! into attention scores after QK^T and before the padding mask and softmax
//! ([`attention`]). [`model`] wraps this in a small encoder classifier so
//! the three strategies (none / hard / soft) can be trained and compared.

pub mod attention;
pub mod mask;
pub mod matrix;
pub mod model;
pub mod pos;
pub mod scalar;
pub mod tokenize;

pub use attention::AttentionConfig;
pub use mask::{GrammaticalMask, MaskKind, MaskStats, SparseMask, NEG_BIAS};
pub use matrix::Matrix;
pub use model::{Metrics, ModelConfig, Strategy, TrainConfig};
pub use pos::{PosTag, RuleSet};
pub use scalar::Scalar;
pub use tokenize::{TaggedWord, TokenizedSequence, Vocab};
