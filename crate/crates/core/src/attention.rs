//! Scaled dot-product and multi-head attention with an additive grammatical
//! bias injected after QK^T and before the padding mask and softmax, plus
//! the sparse row-gather execution path and analytic backward passes.
//!
//! Masks are data-dependent but parameter-free: no gradient flows through
//! them, and the same mask is shared by every head of a layer.

use thiserror::Error;

use crate::mask::{GrammaticalMask, SparseMask, NEG_BIAS};
use crate::matrix::{dot, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub head_dim: usize,
}

impl AttentionConfig {
    pub fn new(num_heads: usize, head_dim: usize) -> Result<Self, AttentionError> {
        if num_heads == 0 || head_dim == 0 {
            return Err(AttentionError::Shape(
                "num_heads and head_dim must be at least 1".into(),
            ));
        }
        Ok(AttentionConfig {
            num_heads,
            head_dim,
        })
    }

    pub fn hidden(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn scale<T: Scalar>(&self) -> T {
        T::one() / T::from_f64c(self.head_dim as f64).sqrt()
    }
}

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sparse mask row {0} is empty")]
    EmptyRow(usize),
    #[error("hard mask leaked probability {prob:e} at ({query}, {key})")]
    Leakage {
        query: usize,
        key: usize,
        prob: f64,
    },
}

/// Row-wise stable softmax: subtract the row max, exponentiate, normalize.
pub fn softmax_rows<T: Scalar>(scores: &Matrix<T>) -> Matrix<T> {
    let mut out = scores.clone();
    for i in 0..out.rows() {
        softmax_row_inplace(out.row_mut(i));
    }
    out
}

pub fn softmax_row_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
    /// Scores after scaling, grammatical bias, and padding.
    pub scores: Matrix<T>,
    pub probs: Matrix<T>,
    scale: T,
}

/// Single-head attention: scores = (Q·Kᵀ)·scale, then the grammatical bias
/// is added, then padded key columns are overwritten to [`NEG_BIAS`], then
/// softmax and the weighted sum of values.
pub fn attention_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    gram_mask: Option<&GrammaticalMask<T>>,
    pad_flags: Option<&[bool]>,
) -> Result<(Matrix<T>, AttentionCache<T>), AttentionError> {
    let l = q.rows();
    let d = q.cols();
    if k.rows() != l || v.rows() != l || k.cols() != d || v.cols() != d {
        return Err(AttentionError::Shape(format!(
            "Q {}x{}, K {}x{}, V {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if let Some(mask) = gram_mask {
        if mask.len() != l {
            return Err(AttentionError::Shape(format!(
                "mask length {} vs sequence length {l}",
                mask.len()
            )));
        }
    }
    if let Some(pads) = pad_flags {
        if pads.len() != l {
            return Err(AttentionError::Shape(format!(
                "pad flags length {} vs sequence length {l}",
                pads.len()
            )));
        }
    }

    let scale = T::one() / T::from_f64c(d as f64).sqrt();
    let mut scores = q.matmul_transpose_b(k);
    scores.scale_inplace(scale);
    if let Some(mask) = gram_mask {
        scores.add_assign(mask.bias());
    }
    if let Some(pads) = pad_flags {
        let neg = T::from_f64c(NEG_BIAS);
        for i in 0..l {
            let row = scores.row_mut(i);
            for (entry, &padded) in row.iter_mut().zip(pads) {
                if padded {
                    *entry = neg;
                }
            }
        }
    }
    if gram_mask.is_some() || pad_flags.is_some() {
        // Biases saturate at the sentinel rather than summing below it, so
        // mask addition and padding overwrite commute and nothing drifts
        // toward overflow in low precision.
        let neg = T::from_f64c(NEG_BIAS);
        for entry in scores.data_mut() {
            if *entry < neg {
                *entry = neg;
            }
        }
    }
    let probs = softmax_rows(&scores);
    let output = probs.matmul(v);
    let cache = AttentionCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        scores,
        probs,
        scale,
    };
    Ok((output, cache))
}

/// Analytic gradients of [`attention_forward`]. The mask is a constant, so
/// no gradient flows through it; exactly-zero probabilities (hard-masked or
/// padded pairs) contribute exactly-zero gradient.
pub fn attention_backward<T: Scalar>(
    cache: &AttentionCache<T>,
    d_output: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>), AttentionError> {
    let l = cache.q.rows();
    let d = cache.q.cols();
    if d_output.rows() != l || d_output.cols() != d {
        return Err(AttentionError::Shape(format!(
            "d_output {}x{} vs {l}x{d}",
            d_output.rows(),
            d_output.cols()
        )));
    }

    let d_v = cache.probs.matmul_transpose_a(d_output);
    let d_probs = d_output.matmul_transpose_b(&cache.v);

    // Softmax backward per row: dz_j = p_j * (dp_j - sum_k dp_k p_k).
    let mut d_scores = Matrix::zeros(l, l);
    for i in 0..l {
        let p_row = cache.probs.row(i);
        let dp_row = d_probs.row(i);
        let inner = dot(dp_row, p_row);
        let out_row = d_scores.row_mut(i);
        for ((o, &p), &dp) in out_row.iter_mut().zip(p_row).zip(dp_row) {
            *o = p * (dp - inner);
        }
    }

    let mut d_q = d_scores.matmul(&cache.k);
    d_q.scale_inplace(cache.scale);
    let mut d_k = d_scores.matmul_transpose_a(&cache.q);
    d_k.scale_inplace(cache.scale);
    Ok((d_q, d_k, d_v))
}

/// Observer for the work performed by the sparse kernel. The no-op
/// implementation compiles away, so library callers pay nothing.
pub trait PairCounter {
    fn record(&mut self, pairs: usize);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoopCounter;

impl PairCounter for NoopCounter {
    #[inline(always)]
    fn record(&mut self, _: usize) {}
}

/// Counts score pairs actually computed by the sparse path.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounter {
    pub score_pairs: usize,
}

impl PairCounter for OpCounter {
    #[inline(always)]
    fn record(&mut self, pairs: usize) {
        self.score_pairs += pairs;
    }
}

/// Hard-masked attention that only touches the allowed key indices of each
/// row: O(L·C) dot products instead of O(L²). Mathematically equal to the
/// dense path under the same hard mask.
pub fn sparse_attention_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    smask: &SparseMask,
) -> Result<Matrix<T>, AttentionError> {
    sparse_attention_forward_counted(q, k, v, smask, &mut NoopCounter)
}

pub fn sparse_attention_forward_counted<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    smask: &SparseMask,
    counter: &mut impl PairCounter,
) -> Result<Matrix<T>, AttentionError> {
    let l = q.rows();
    let d = q.cols();
    if k.rows() != l || v.rows() != l || k.cols() != d || v.cols() != d || smask.len() != l {
        return Err(AttentionError::Shape(format!(
            "Q {}x{}, K {}x{}, V {}x{}, mask {}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols(),
            smask.len()
        )));
    }

    let scale = T::one() / T::from_f64c(d as f64).sqrt();
    let mut output = Matrix::zeros(l, d);
    let mut weights: Vec<T> = Vec::new();
    for r in 0..l {
        let keys = smask.row(r);
        if keys.is_empty() {
            return Err(AttentionError::EmptyRow(r));
        }
        counter.record(keys.len());
        let q_row = q.row(r);
        weights.clear();
        weights.extend(keys.iter().map(|&j| dot(q_row, k.row(j as usize)) * scale));
        softmax_row_inplace(&mut weights);
        let out_row = output.row_mut(r);
        for (&j, &w) in keys.iter().zip(weights.iter()) {
            for (o, &val) in out_row.iter_mut().zip(v.row(j as usize)) {
                *o += w * val;
            }
        }
    }
    Ok(output)
}

/// Projection weights of one multi-head attention block. Weight matrices
/// are hidden×hidden, applied as `x · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaWeights<T> {
    pub w_query: Matrix<T>,
    pub b_query: Vec<T>,
    pub w_key: Matrix<T>,
    pub b_key: Vec<T>,
    pub w_value: Matrix<T>,
    pub b_value: Vec<T>,
    pub w_output: Matrix<T>,
    pub b_output: Vec<T>,
}

impl<T: Scalar> MhaWeights<T> {
    pub fn zeros(hidden: usize) -> Self {
        MhaWeights {
            w_query: Matrix::zeros(hidden, hidden),
            b_query: vec![T::zero(); hidden],
            w_key: Matrix::zeros(hidden, hidden),
            b_key: vec![T::zero(); hidden],
            w_value: Matrix::zeros(hidden, hidden),
            b_value: vec![T::zero(); hidden],
            w_output: Matrix::zeros(hidden, hidden),
            b_output: vec![T::zero(); hidden],
        }
    }

    /// self += other, used for gradient accumulation.
    pub fn add_assign(&mut self, other: &Self) {
        self.w_query.add_assign(&other.w_query);
        self.w_key.add_assign(&other.w_key);
        self.w_value.add_assign(&other.w_value);
        self.w_output.add_assign(&other.w_output);
        for (dst, src) in [
            (&mut self.b_query, &other.b_query),
            (&mut self.b_key, &other.b_key),
            (&mut self.b_value, &other.b_value),
            (&mut self.b_output, &other.b_output),
        ] {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

/// Gradients mirror the weight layout exactly.
pub type MhaGrads<T> = MhaWeights<T>;

#[derive(Debug, Clone)]
pub struct MhaCache<T> {
    pub x: Matrix<T>,
    pub heads: Vec<AttentionCache<T>>,
    pub concat: Matrix<T>,
}

pub fn linear_forward<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Matrix<T> {
    let mut out = x.matmul(w);
    for i in 0..out.rows() {
        for (o, &bias) in out.row_mut(i).iter_mut().zip(b) {
            *o += bias;
        }
    }
    out
}

/// Multi-head attention: per-head scaled dot-product attention with the
/// same grammatical mask applied to every head, concatenated and projected.
pub fn multi_head_forward<T: Scalar>(
    x: &Matrix<T>,
    weights: &MhaWeights<T>,
    cfg: &AttentionConfig,
    gram_mask: Option<&GrammaticalMask<T>>,
    pad_flags: Option<&[bool]>,
) -> Result<(Matrix<T>, MhaCache<T>), AttentionError> {
    let hidden = cfg.hidden();
    if x.cols() != hidden {
        return Err(AttentionError::Shape(format!(
            "input width {} vs hidden {hidden}",
            x.cols()
        )));
    }
    if weights.w_query.rows() != hidden || weights.w_query.cols() != hidden {
        return Err(AttentionError::Shape("projection weight shape".into()));
    }

    let q_full = linear_forward(x, &weights.w_query, &weights.b_query);
    let k_full = linear_forward(x, &weights.w_key, &weights.b_key);
    let v_full = linear_forward(x, &weights.w_value, &weights.b_value);

    let l = x.rows();
    let d = cfg.head_dim;
    let mut concat = Matrix::zeros(l, hidden);
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let start = h * d;
        let q_h = q_full.columns(start, d);
        let k_h = k_full.columns(start, d);
        let v_h = v_full.columns(start, d);
        let (out_h, cache_h) = attention_forward(&q_h, &k_h, &v_h, gram_mask, pad_flags)?;
        concat.set_columns(start, &out_h);
        heads.push(cache_h);
    }

    let output = linear_forward(&concat, &weights.w_output, &weights.b_output);
    let cache = MhaCache {
        x: x.clone(),
        heads,
        concat,
    };
    Ok((output, cache))
}

pub fn multi_head_backward<T: Scalar>(
    cache: &MhaCache<T>,
    weights: &MhaWeights<T>,
    cfg: &AttentionConfig,
    d_output: &Matrix<T>,
) -> Result<(Matrix<T>, MhaGrads<T>), AttentionError> {
    let hidden = cfg.hidden();
    let l = cache.x.rows();
    if d_output.rows() != l || d_output.cols() != hidden {
        return Err(AttentionError::Shape(format!(
            "d_output {}x{} vs {l}x{hidden}",
            d_output.rows(),
            d_output.cols()
        )));
    }

    let mut grads = MhaGrads::zeros(hidden);
    grads.w_output = cache.concat.matmul_transpose_a(d_output);
    grads.b_output = d_output.column_sums();
    let d_concat = d_output.matmul_transpose_b(&weights.w_output);

    let d = cfg.head_dim;
    let mut d_q_full = Matrix::zeros(l, hidden);
    let mut d_k_full = Matrix::zeros(l, hidden);
    let mut d_v_full = Matrix::zeros(l, hidden);
    for (h, head_cache) in cache.heads.iter().enumerate() {
        let start = h * d;
        let d_head = d_concat.columns(start, d);
        let (d_q, d_k, d_v) = attention_backward(head_cache, &d_head)?;
        d_q_full.set_columns(start, &d_q);
        d_k_full.set_columns(start, &d_k);
        d_v_full.set_columns(start, &d_v);
    }

    grads.w_query = cache.x.matmul_transpose_a(&d_q_full);
    grads.b_query = d_q_full.column_sums();
    grads.w_key = cache.x.matmul_transpose_a(&d_k_full);
    grads.b_key = d_k_full.column_sums();
    grads.w_value = cache.x.matmul_transpose_a(&d_v_full);
    grads.b_value = d_v_full.column_sums();

    let mut d_x = d_q_full.matmul_transpose_b(&weights.w_query);
    d_x.add_assign(&d_k_full.matmul_transpose_b(&weights.w_key));
    d_x.add_assign(&d_v_full.matmul_transpose_b(&weights.w_value));
    Ok((d_x, grads))
}

/// Checks that no hard-disallowed pair received attention probability above
/// `tol`. Used as an instrumented invariant during hard-strategy training.
pub fn assert_zero_leakage<T: Scalar>(
    probs: &Matrix<T>,
    mask: &GrammaticalMask<T>,
    tol: f64,
) -> Result<(), AttentionError> {
    let neg = T::from_f64c(NEG_BIAS);
    for i in 0..probs.rows() {
        for j in 0..probs.cols() {
            if mask.at(i, j) == neg && probs[(i, j)].to_f64c() > tol {
                return Err(AttentionError::Leakage {
                    query: i,
                    key: j,
                    prob: probs[(i, j)].to_f64c(),
                });
            }
        }
    }
    Ok(())
}
