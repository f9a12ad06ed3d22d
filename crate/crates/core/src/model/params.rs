//! Parameter containers with a fixed traversal order shared by the
//! optimizer, the checkpoint manifest, and initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;
use crate::attention::MhaWeights;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    /// in × out, applied as x · W + b.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearParams<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        LinearParams {
            weight: Matrix::zeros(input, output),
            bias: vec![T::zero(); output],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub scale: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn identity(width: usize) -> Self {
        LayerNormParams {
            scale: vec![T::one(); width],
            bias: vec![T::zero(); width],
        }
    }

    pub fn zeros(width: usize) -> Self {
        LayerNormParams {
            scale: vec![T::zero(); width],
            bias: vec![T::zero(); width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<T> {
    pub attn: MhaWeights<T>,
    pub attn_norm: LayerNormParams<T>,
    pub ffn_in: LinearParams<T>,
    pub ffn_out: LinearParams<T>,
    pub ffn_norm: LayerNormParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub token_embed: Matrix<T>,
    pub pos_embed: Matrix<T>,
    pub layers: Vec<EncoderLayerParams<T>>,
    pub head: LinearParams<T>,
}

/// One named tensor in the fixed traversal order.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let hidden = cfg.hidden;
        let layers = (0..cfg.num_layers)
            .map(|_| EncoderLayerParams {
                attn: MhaWeights::zeros(hidden),
                attn_norm: LayerNormParams::zeros(hidden),
                ffn_in: LinearParams::zeros(hidden, cfg.ffn_dim),
                ffn_out: LinearParams::zeros(cfg.ffn_dim, hidden),
                ffn_norm: LayerNormParams::zeros(hidden),
            })
            .collect();
        ModelParams {
            token_embed: Matrix::zeros(cfg.vocab_size, hidden),
            pos_embed: Matrix::zeros(cfg.max_len, hidden),
            layers,
            head: LinearParams::zeros(hidden, cfg.num_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            token_embed: Matrix::zeros(self.token_embed.rows(), self.token_embed.cols()),
            pos_embed: Matrix::zeros(self.pos_embed.rows(), self.pos_embed.cols()),
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayerParams {
                    attn: MhaWeights::zeros(l.attn.w_query.rows()),
                    attn_norm: LayerNormParams::zeros(l.attn_norm.scale.len()),
                    ffn_in: LinearParams::zeros(l.ffn_in.weight.rows(), l.ffn_in.weight.cols()),
                    ffn_out: LinearParams::zeros(l.ffn_out.weight.rows(), l.ffn_out.weight.cols()),
                    ffn_norm: LayerNormParams::zeros(l.ffn_norm.scale.len()),
                })
                .collect(),
            head: LinearParams::zeros(self.head.weight.rows(), self.head.weight.cols()),
        }
    }

    /// Tensors in manifest order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![self.token_embed.data(), self.pos_embed.data()];
        for layer in &self.layers {
            out.push(layer.attn.w_query.data());
            out.push(&layer.attn.b_query);
            out.push(layer.attn.w_key.data());
            out.push(&layer.attn.b_key);
            out.push(layer.attn.w_value.data());
            out.push(&layer.attn.b_value);
            out.push(layer.attn.w_output.data());
            out.push(&layer.attn.b_output);
            out.push(&layer.attn_norm.scale);
            out.push(&layer.attn_norm.bias);
            out.push(layer.ffn_in.weight.data());
            out.push(&layer.ffn_in.bias);
            out.push(layer.ffn_out.weight.data());
            out.push(&layer.ffn_out.bias);
            out.push(&layer.ffn_norm.scale);
            out.push(&layer.ffn_norm.bias);
        }
        out.push(self.head.weight.data());
        out.push(&self.head.bias);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> =
            vec![self.token_embed.data_mut(), self.pos_embed.data_mut()];
        for layer in &mut self.layers {
            out.push(layer.attn.w_query.data_mut());
            out.push(&mut layer.attn.b_query);
            out.push(layer.attn.w_key.data_mut());
            out.push(&mut layer.attn.b_key);
            out.push(layer.attn.w_value.data_mut());
            out.push(&mut layer.attn.b_value);
            out.push(layer.attn.w_output.data_mut());
            out.push(&mut layer.attn.b_output);
            out.push(&mut layer.attn_norm.scale);
            out.push(&mut layer.attn_norm.bias);
            out.push(layer.ffn_in.weight.data_mut());
            out.push(&mut layer.ffn_in.bias);
            out.push(layer.ffn_out.weight.data_mut());
            out.push(&mut layer.ffn_out.bias);
            out.push(&mut layer.ffn_norm.scale);
            out.push(&mut layer.ffn_norm.bias);
        }
        out.push(self.head.weight.data_mut());
        out.push(&mut self.head.bias);
        out
    }

    /// Names and shapes aligned with [`ModelParams::slices`].
    pub fn manifest(&self) -> Vec<TensorInfo> {
        let mut out = vec![
            TensorInfo {
                name: "token_embed".into(),
                shape: vec![self.token_embed.rows(), self.token_embed.cols()],
            },
            TensorInfo {
                name: "pos_embed".into(),
                shape: vec![self.pos_embed.rows(), self.pos_embed.cols()],
            },
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let h = layer.attn.w_query.rows();
            let mat = |name: String, r: usize, c: usize| TensorInfo {
                name,
                shape: vec![r, c],
            };
            let vecinfo = |name: String, n: usize| TensorInfo {
                name,
                shape: vec![n],
            };
            out.push(mat(format!("layer{i}.attn.w_query"), h, h));
            out.push(vecinfo(format!("layer{i}.attn.b_query"), h));
            out.push(mat(format!("layer{i}.attn.w_key"), h, h));
            out.push(vecinfo(format!("layer{i}.attn.b_key"), h));
            out.push(mat(format!("layer{i}.attn.w_value"), h, h));
            out.push(vecinfo(format!("layer{i}.attn.b_value"), h));
            out.push(mat(format!("layer{i}.attn.w_output"), h, h));
            out.push(vecinfo(format!("layer{i}.attn.b_output"), h));
            out.push(vecinfo(format!("layer{i}.attn_norm.scale"), h));
            out.push(vecinfo(format!("layer{i}.attn_norm.bias"), h));
            out.push(mat(
                format!("layer{i}.ffn_in.weight"),
                layer.ffn_in.weight.rows(),
                layer.ffn_in.weight.cols(),
            ));
            out.push(vecinfo(
                format!("layer{i}.ffn_in.bias"),
                layer.ffn_in.bias.len(),
            ));
            out.push(mat(
                format!("layer{i}.ffn_out.weight"),
                layer.ffn_out.weight.rows(),
                layer.ffn_out.weight.cols(),
            ));
            out.push(vecinfo(
                format!("layer{i}.ffn_out.bias"),
                layer.ffn_out.bias.len(),
            ));
            out.push(vecinfo(format!("layer{i}.ffn_norm.scale"), h));
            out.push(vecinfo(format!("layer{i}.ffn_norm.bias"), h));
        }
        out.push(TensorInfo {
            name: "head.weight".into(),
            shape: vec![self.head.weight.rows(), self.head.weight.cols()],
        });
        out.push(TensorInfo {
            name: "head.bias".into(),
            shape: vec![self.head.bias.len()],
        });
        out
    }

    pub fn count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// self += other, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams<T>) {
        let theirs = other.slices();
        for (mine, theirs) in self.slices_mut().into_iter().zip(theirs) {
            for (a, &b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    pub fn fill(&mut self, value: T) {
        for slice in self.slices_mut() {
            for x in slice {
                *x = value;
            }
        }
    }

    /// Converts precision; used to run gradient checks in f64 on models
    /// initialized identically to their f32 counterparts.
    pub fn convert<U: Scalar>(&self) -> ModelParams<U> {
        let conv_mat = |m: &Matrix<T>| {
            Matrix::from_vec(
                m.rows(),
                m.cols(),
                m.data().iter().map(|&x| U::from_f64c(x.to_f64c())).collect(),
            )
        };
        let conv_vec =
            |v: &Vec<T>| -> Vec<U> { v.iter().map(|&x| U::from_f64c(x.to_f64c())).collect() };
        ModelParams {
            token_embed: conv_mat(&self.token_embed),
            pos_embed: conv_mat(&self.pos_embed),
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayerParams {
                    attn: MhaWeights {
                        w_query: conv_mat(&l.attn.w_query),
                        b_query: conv_vec(&l.attn.b_query),
                        w_key: conv_mat(&l.attn.w_key),
                        b_key: conv_vec(&l.attn.b_key),
                        w_value: conv_mat(&l.attn.w_value),
                        b_value: conv_vec(&l.attn.b_value),
                        w_output: conv_mat(&l.attn.w_output),
                        b_output: conv_vec(&l.attn.b_output),
                    },
                    attn_norm: LayerNormParams {
                        scale: conv_vec(&l.attn_norm.scale),
                        bias: conv_vec(&l.attn_norm.bias),
                    },
                    ffn_in: LinearParams {
                        weight: conv_mat(&l.ffn_in.weight),
                        bias: conv_vec(&l.ffn_in.bias),
                    },
                    ffn_out: LinearParams {
                        weight: conv_mat(&l.ffn_out.weight),
                        bias: conv_vec(&l.ffn_out.bias),
                    },
                    ffn_norm: LayerNormParams {
                        scale: conv_vec(&l.ffn_norm.scale),
                        bias: conv_vec(&l.ffn_norm.bias),
                    },
                })
                .collect(),
            head: LinearParams {
                weight: conv_mat(&self.head.weight),
                bias: conv_vec(&self.head.bias),
            },
        }
    }
}

/// First and second AdamW moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        AdamMoments {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Draws from a normal(0, sigma) truncated at ±2 sigma.
fn truncated_normal<T: Scalar>(rng: &mut ChaCha8Rng, sigma: f64) -> T {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let x = z * sigma;
        if x.abs() <= 2.0 * sigma {
            return T::from_f64c(x);
        }
    }
}

/// Initializes embeddings and projection weights from a truncated normal
/// (sigma 0.02), layer-norm scales to 1, and all biases to 0. Deterministic
/// given the seed; draw order is the manifest order.
pub fn init_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<T>, String> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(cfg);
    let manifest = params.manifest();
    for (slice, info) in params.slices_mut().into_iter().zip(&manifest) {
        let is_weight = info.shape.len() == 2;
        let is_norm_scale = info.name.ends_with("norm.scale");
        if is_weight {
            for x in slice {
                *x = truncated_normal(&mut rng, 0.02);
            }
        } else if is_norm_scale {
            for x in slice {
                *x = T::one();
            }
        }
        // Everything else (linear and norm biases) stays zero.
    }
    Ok(params)
}
