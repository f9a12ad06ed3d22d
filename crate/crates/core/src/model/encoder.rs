//! Forward and analytic backward pass of the encoder classifier:
//! embeddings (token + position), `num_layers` blocks of
//! [multi-head attention + residual + layer-norm + feed-forward + residual
//! + layer-norm], then a linear head over the position-0 ([CLS]) vector.

use thiserror::Error;

use super::params::{LayerNormParams, ModelParams};
use super::{ModelConfig, Strategy};
use crate::attention::{
    linear_forward, multi_head_backward, multi_head_forward, AttentionError, MhaCache,
};
use crate::mask::{build_hard_mask, build_soft_mask, GrammaticalMask};
use crate::matrix::Matrix;
use crate::pos::RuleSet;
use crate::scalar::Scalar;
use crate::tokenize::TokenizedSequence;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    BadTokenId { id: u32, vocab: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    normalized: Matrix<T>,
    inv_std: Vec<T>,
}

fn layer_norm_forward<T: Scalar>(
    x: &Matrix<T>,
    p: &LayerNormParams<T>,
) -> (Matrix<T>, LayerNormCache<T>) {
    let (rows, cols) = (x.rows(), x.cols());
    let inv_h = T::one() / T::from_f64c(cols as f64);
    let eps = T::from_f64c(LN_EPS);
    let mut normalized = Matrix::zeros(rows, cols);
    let mut out = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_h;
        let var = row
            .iter()
            .map(|&v| {
                let d = v - mean;
                d * d
            })
            .sum::<T>()
            * inv_h;
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        let norm_row = normalized.row_mut(i);
        for (n, &v) in norm_row.iter_mut().zip(row) {
            *n = (v - mean) * istd;
        }
        let out_row = out.row_mut(i);
        for j in 0..cols {
            out_row[j] = normalized[(i, j)] * p.scale[j] + p.bias[j];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns (d_input, d_scale, d_bias).
fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    p: &LayerNormParams<T>,
    d_out: &Matrix<T>,
) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let (rows, cols) = (d_out.rows(), d_out.cols());
    let inv_h = T::one() / T::from_f64c(cols as f64);
    let mut d_x = Matrix::zeros(rows, cols);
    let mut d_scale = vec![T::zero(); cols];
    let mut d_bias = vec![T::zero(); cols];
    for i in 0..rows {
        let dy = d_out.row(i);
        let xhat = cache.normalized.row(i);
        let istd = cache.inv_std[i];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..cols {
            let dxhat = dy[j] * p.scale[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat[j];
            d_scale[j] += dy[j] * xhat[j];
            d_bias[j] += dy[j];
        }
        mean_dxhat *= inv_h;
        mean_dxhat_xhat *= inv_h;
        let dx_row = d_x.row_mut(i);
        for j in 0..cols {
            let dxhat = dy[j] * p.scale[j];
            dx_row[j] = istd * (dxhat - mean_dxhat - xhat[j] * mean_dxhat_xhat);
        }
    }
    (d_x, d_scale, d_bias)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64c(GELU_C);
    let a = T::from_f64c(GELU_A);
    let half = T::from_f64c(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * x * (T::one() + t)
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64c(GELU_C);
    let a = T::from_f64c(GELU_A);
    let half = T::from_f64c(0.5);
    let three = T::from_f64c(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    mha: MhaCache<T>,
    ln1: LayerNormCache<T>,
    x1: Matrix<T>,
    ffn_pre: Matrix<T>,
    ffn_act: Matrix<T>,
    ln2: LayerNormCache<T>,
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    /// Mask built for this forward pass; `None` under the none strategy.
    pub mask: Option<GrammaticalMask<T>>,
    pub pad_flags: Vec<bool>,
    pub layers: Vec<LayerCache<T>>,
    pub final_states: Matrix<T>,
    ids: Vec<u32>,
}

impl<T: Scalar> ModelCache<T> {
    /// Attention probabilities of one layer/head, for inspection and export.
    pub fn head_probs(&self, layer: usize, head: usize) -> &Matrix<T> {
        &self.layers[layer].mha.heads[head].probs
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Asserts the zero-leakage invariant on every layer and head when the
    /// forward pass ran under a hard mask.
    pub fn check_zero_leakage(&self, tol: f64) -> Result<(), AttentionError> {
        let Some(mask) = &self.mask else {
            return Ok(());
        };
        if mask.kind() != crate::mask::MaskKind::Hard {
            return Ok(());
        }
        for layer in &self.layers {
            for head in &layer.mha.heads {
                crate::attention::assert_zero_leakage(&head.probs, mask, tol)?;
            }
        }
        Ok(())
    }
}

/// Builds the strategy's grammatical mask for a tag list.
pub fn strategy_mask<T: Scalar>(
    strategy: Strategy,
    rules: &RuleSet,
    tags: &[crate::pos::PosTag],
) -> Option<GrammaticalMask<T>> {
    match strategy {
        Strategy::None => None,
        Strategy::Hard => Some(build_hard_mask(rules, tags)),
        Strategy::Soft => Some(build_soft_mask(rules, tags)),
    }
}

/// Full forward pass for one sequence. The grammatical mask is rebuilt from
/// the sequence tags on every call (no caching), and the same mask is used
/// by every head of every layer.
pub fn forward_one<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    rules: &RuleSet,
    seq: &TokenizedSequence,
) -> Result<(Vec<T>, ModelCache<T>), ModelError> {
    let l = seq.len();
    if l > cfg.max_len {
        return Err(ModelError::TooLong {
            len: l,
            max: cfg.max_len,
        });
    }
    for &id in &seq.ids {
        if id as usize >= cfg.vocab_size {
            return Err(ModelError::BadTokenId {
                id,
                vocab: cfg.vocab_size,
            });
        }
    }

    let hidden = cfg.hidden;
    let mask = strategy_mask(cfg.strategy, rules, &seq.tags);
    let pad_flags = seq.pad_flags();
    let att_cfg = cfg.attention_config();

    let mut x = Matrix::from_fn(l, hidden, |i, j| {
        params.token_embed[(seq.ids[i] as usize, j)] + params.pos_embed[(i, j)]
    });

    let mut layer_caches = Vec::with_capacity(cfg.num_layers);
    for layer in &params.layers {
        let (attn_out, mha) =
            multi_head_forward(&x, &layer.attn, &att_cfg, mask.as_ref(), Some(&pad_flags))?;
        let mut res1 = attn_out;
        res1.add_assign(&x);
        let (x1, ln1) = layer_norm_forward(&res1, &layer.attn_norm);

        let ffn_pre = linear_forward(&x1, &layer.ffn_in.weight, &layer.ffn_in.bias);
        let ffn_act = ffn_pre.map(gelu);
        let ffn_out = linear_forward(&ffn_act, &layer.ffn_out.weight, &layer.ffn_out.bias);
        let mut res2 = ffn_out;
        res2.add_assign(&x1);
        let (x2, ln2) = layer_norm_forward(&res2, &layer.ffn_norm);

        layer_caches.push(LayerCache {
            mha,
            ln1,
            x1,
            ffn_pre,
            ffn_act,
            ln2,
        });
        x = x2;
    }

    let cls = x.row(0);
    let logits: Vec<T> = (0..cfg.num_classes)
        .map(|c| {
            let mut acc = params.head.bias[c];
            for (j, &v) in cls.iter().enumerate() {
                acc += v * params.head.weight[(j, c)];
            }
            acc
        })
        .collect();

    let cache = ModelCache {
        mask,
        pad_flags,
        layers: layer_caches,
        final_states: x,
        ids: seq.ids.clone(),
    };
    Ok((logits, cache))
}

/// Accumulates gradients for one sequence into `grads`.
pub fn backward_one<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    cache: &ModelCache<T>,
    d_logits: &[T],
    grads: &mut ModelParams<T>,
) -> Result<(), ModelError> {
    let hidden = cfg.hidden;
    let l = cache.final_states.rows();
    let att_cfg = cfg.attention_config();

    // Classification head.
    let cls = cache.final_states.row(0);
    let mut d_x = Matrix::zeros(l, hidden);
    {
        let d_cls = d_x.row_mut(0);
        for (c, &dl) in d_logits.iter().enumerate() {
            grads.head.bias[c] += dl;
            for j in 0..hidden {
                grads.head.weight[(j, c)] += cls[j] * dl;
                d_cls[j] += dl * params.head.weight[(j, c)];
            }
        }
    }

    for (layer_idx, layer_cache) in cache.layers.iter().enumerate().rev() {
        let layer = &params.layers[layer_idx];
        let g = &mut grads.layers[layer_idx];

        // Second layer-norm over res2 = x1 + ffn_out.
        let (d_res2, d_scale2, d_bias2) = layer_norm_backward(&layer_cache.ln2, &layer.ffn_norm, &d_x);
        accumulate(&mut g.ffn_norm.scale, &d_scale2);
        accumulate(&mut g.ffn_norm.bias, &d_bias2);

        // FFN output projection.
        let d_ffn_act = d_res2.matmul_transpose_b(&layer.ffn_out.weight);
        g.ffn_out
            .weight
            .add_assign(&layer_cache.ffn_act.matmul_transpose_a(&d_res2));
        accumulate(&mut g.ffn_out.bias, &d_res2.column_sums());

        // Activation.
        let mut d_ffn_pre = d_ffn_act;
        for (dp, &pre) in d_ffn_pre
            .data_mut()
            .iter_mut()
            .zip(layer_cache.ffn_pre.data())
        {
            *dp *= gelu_grad(pre);
        }

        // FFN input projection; d_x1 collects the residual and FFN paths.
        let mut d_x1 = d_res2;
        d_x1.add_assign(&d_ffn_pre.matmul_transpose_b(&layer.ffn_in.weight));
        g.ffn_in
            .weight
            .add_assign(&layer_cache.x1.matmul_transpose_a(&d_ffn_pre));
        accumulate(&mut g.ffn_in.bias, &d_ffn_pre.column_sums());

        // First layer-norm over res1 = input + attn_out.
        let (d_res1, d_scale1, d_bias1) =
            layer_norm_backward(&layer_cache.ln1, &layer.attn_norm, &d_x1);
        accumulate(&mut g.attn_norm.scale, &d_scale1);
        accumulate(&mut g.attn_norm.bias, &d_bias1);

        // Attention block.
        let (d_attn_in, mha_grads) =
            multi_head_backward(&layer_cache.mha, &layer.attn, &att_cfg, &d_res1)?;
        g.attn.add_assign(&mha_grads);

        d_x = d_res1;
        d_x.add_assign(&d_attn_in);
    }

    // Embedding tables.
    for i in 0..l {
        let token = cache.ids[i] as usize;
        let d_row = d_x.row(i);
        for (j, &dv) in d_row.iter().enumerate() {
            grads.token_embed[(token, j)] += dv;
            grads.pos_embed[(i, j)] += dv;
        }
    }
    Ok(())
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Mean negative log-softmax of the true class over a batch.
pub fn cross_entropy<T: Scalar>(logits: &[Vec<T>], labels: &[usize]) -> Result<T, ModelError> {
    Ok(cross_entropy_with_grad(logits, labels)?.0)
}

/// Loss plus the gradient of the mean loss with respect to the logits.
pub fn cross_entropy_with_grad<T: Scalar>(
    logits: &[Vec<T>],
    labels: &[usize],
) -> Result<(T, Vec<Vec<T>>), ModelError> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(ModelError::EmptyBatch);
    }
    let batch = T::from_f64c(logits.len() as f64);
    let inv_batch = T::one() / batch;
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &label) in logits.iter().zip(labels) {
        if label >= row.len() {
            return Err(ModelError::BadLabel {
                label,
                classes: row.len(),
            });
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = row.iter().map(|&x| (x - max).exp()).sum();
        let log_sum = max + sum_exp.ln();
        total += log_sum - row[label];
        let mut d_row: Vec<T> = row
            .iter()
            .map(|&x| (x - max).exp() / sum_exp * inv_batch)
            .collect();
        d_row[label] -= inv_batch;
        grads.push(d_row);
    }
    Ok((total * inv_batch, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_model;
    use crate::model::Strategy;
    use crate::pos::PosTag;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_cfg(strategy: Strategy) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden: 8,
            num_heads: 2,
            ffn_dim: 16,
            vocab_size: 24,
            max_len: 12,
            num_classes: 2,
            strategy,
        }
    }

    fn fake_sequence(rng: &mut StdRng, cfg: &ModelConfig, l: usize) -> TokenizedSequence {
        let mut tags = vec![PosTag::CLS];
        for _ in 1..l - 1 {
            tags.push(PosTag::ALL[rng.random_range(0..17)]);
        }
        tags.push(PosTag::SEP);
        TokenizedSequence {
            ids: (0..l)
                .map(|_| rng.random_range(0..cfg.vocab_size as u32))
                .collect(),
            spans: vec![(0, 0); l],
            parent_word: vec![None; l],
            tags,
            pad_len: 0,
        }
    }

    #[test]
    fn logits_have_class_count_and_are_deterministic() {
        let cfg = tiny_cfg(Strategy::Hard);
        let params = init_model::<f32>(&cfg, 5).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let seq = fake_sequence(&mut rng, &cfg, 7);
        let rules = RuleSet::default();
        let (logits_a, _) = forward_one(&params, &cfg, &rules, &seq).unwrap();
        let (logits_b, _) = forward_one(&params, &cfg, &rules, &seq).unwrap();
        assert_eq!(logits_a.len(), 2);
        assert_eq!(logits_a, logits_b);
    }

    #[test]
    fn none_strategy_equals_all_allowed_hard() {
        let mut rng = StdRng::seed_from_u64(2);
        let cfg_none = tiny_cfg(Strategy::None);
        let cfg_hard = tiny_cfg(Strategy::Hard);
        let params = init_model::<f32>(&cfg_none, 9).unwrap();
        let all = RuleSet::all_allowed();
        for _ in 0..5 {
            let seq = fake_sequence(&mut rng, &cfg_none, 8);
            let (a, _) = forward_one(&params, &cfg_none, &RuleSet::default(), &seq).unwrap();
            let (b, _) = forward_one(&params, &cfg_hard, &all, &seq).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn sequence_too_long_is_error() {
        let cfg = tiny_cfg(Strategy::None);
        let params = init_model::<f32>(&cfg, 5).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let mut seq = fake_sequence(&mut rng, &cfg, 12);
        seq.ids.push(0);
        seq.tags.push(PosTag::PAD);
        seq.spans.push((0, 0));
        seq.parent_word.push(None);
        assert!(matches!(
            forward_one(&params, &cfg, &RuleSet::default(), &seq),
            Err(ModelError::TooLong { .. })
        ));
    }

    #[test]
    fn cross_entropy_known_values() {
        let loss = cross_entropy(&[vec![0.0f64, 0.0]], &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        let loss = cross_entropy(&[vec![10.0f64, -10.0]], &[0]).unwrap();
        assert!((loss - 2.061153622438558e-9).abs() < 1e-15);

        assert!(cross_entropy(&[vec![0.0f64, 0.0]], &[2]).is_err());
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(4);
        let logits: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels = vec![1usize, 3, 0];
        let (_, grads) = cross_entropy_with_grad(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for c in 0..4 {
                let mut plus = logits.clone();
                plus[i][c] += h;
                let mut minus = logits.clone();
                minus[i][c] -= h;
                let numeric = (cross_entropy(&plus, &labels).unwrap()
                    - cross_entropy(&minus, &labels).unwrap())
                    / (2.0 * h);
                let analytic = grads[i][c];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(rel <= 1e-6, "logit ({i},{c}): rel {rel}");
            }
        }
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = tiny_cfg(Strategy::Hard);
        let params = init_model::<f64>(&cfg, 13).unwrap();
        let rules = RuleSet::default();
        let mut rng = StdRng::seed_from_u64(5);
        let seq = fake_sequence(&mut rng, &cfg, 6);
        let label = 1usize;

        let loss_of = |p: &ModelParams<f64>| -> f64 {
            let (logits, _) = forward_one(p, &cfg, &rules, &seq).unwrap();
            cross_entropy(&[logits], &[label]).unwrap()
        };

        let (logits, cache) = forward_one(&params, &cfg, &rules, &seq).unwrap();
        let (_, d_logits) = cross_entropy_with_grad(&[logits], &[label]).unwrap();
        let mut grads = params.zeros_like();
        backward_one(&params, &cfg, &cache, &d_logits[0], &mut grads).unwrap();

        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        let n_tensors = params.slices().len();
        for tensor_idx in 0..n_tensors {
            let len = params.slices()[tensor_idx].len();
            // Sample a few coordinates from every tensor.
            let coords: Vec<usize> = (0..len.min(4))
                .map(|_| rng.random_range(0..len))
                .collect();
            for &coord in &coords {
                let mut plus = params.clone();
                plus.slices_mut()[tensor_idx][coord] += h;
                let mut minus = params.clone();
                minus.slices_mut()[tensor_idx][coord] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads.slices()[tensor_idx][coord];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn hard_forward_has_no_leakage() {
        let cfg = tiny_cfg(Strategy::Hard);
        let params = init_model::<f32>(&cfg, 21).unwrap();
        let rules = RuleSet::default();
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..10 {
            let seq = fake_sequence(&mut rng, &cfg, 9);
            let (_, cache) = forward_one(&params, &cfg, &rules, &seq).unwrap();
            cache.check_zero_leakage(1e-6).unwrap();
        }
    }
}
