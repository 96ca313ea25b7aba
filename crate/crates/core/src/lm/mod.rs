//! Small pre-norm causal transformer: exact forward pass, analytic
//! backpropagation, SGD/Adam steps. Output head is weight-tied to the
//! token embeddings.

mod backward;
mod forward;
mod optim;

pub use forward::{cross_entropy, Cache};
pub use optim::{adam_step, sgd_step, AdamState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AlmError, Result};
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Row-major 2-D tensor. Biases and layer-norm parameters are 1 x d rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub data: Vec<S>,
    pub rows: usize,
    pub cols: usize,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            data: vec![S::zero(); rows * cols],
            rows,
            cols,
        }
    }

    pub fn filled(rows: usize, cols: usize, v: S) -> Self {
        Tensor {
            data: vec![v; rows * cols],
            rows,
            cols,
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }
}

/// out = a @ b, (r x k)(k x c).
pub(crate) fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(a.cols, b.rows);
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = b.row(k);
            for (o, &bkj) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + aik * bkj;
            }
        }
    }
    out
}

/// out = a @ b^T, (r x k)(c x k)^T.
pub(crate) fn matmul_a_bt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(a.cols, b.cols);
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow.iter()) {
                acc = acc + x * y;
            }
            out.row_mut(i)[j] = acc;
        }
    }
    out
}

/// acc += a^T @ b, (t x r)^T (t x c).
pub(crate) fn matmul_at_b_acc<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, acc: &mut Tensor<S>) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!(acc.rows, a.cols);
    debug_assert_eq!(acc.cols, b.cols);
    for t in 0..a.rows {
        let arow = a.row(t);
        let brow = b.row(t);
        for (i, &ati) in arow.iter().enumerate() {
            let orow = acc.row_mut(i);
            for (o, &btj) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + ati * btj;
            }
        }
    }
}

/// Architecture of one causal LM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl ModelConfig {
    /// Desk-scale default: trains in seconds-to-minutes per author.
    pub fn desk_default() -> Self {
        ModelConfig {
            vocab_size: 512,
            context_len: 128,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.d_model == 0
            || self.n_layers == 0
            || self.n_heads == 0
            || self.d_ff == 0
        {
            return Err(AlmError::InvalidConfig("zero-sized dimension".into()));
        }
        if self.context_len < 2 {
            return Err(AlmError::InvalidConfig(format!(
                "context_len {} < 2",
                self.context_len
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(AlmError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<S> {
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<S> {
    pub ln1: LayerNorm<S>,
    /// d x 3d, columns laid out [Q | K | V].
    pub w_qkv: Tensor<S>,
    pub b_qkv: Tensor<S>,
    pub w_proj: Tensor<S>,
    pub b_proj: Tensor<S>,
    pub ln2: LayerNorm<S>,
    pub w_ff1: Tensor<S>,
    pub b_ff1: Tensor<S>,
    pub w_ff2: Tensor<S>,
    pub b_ff2: Tensor<S>,
}

/// Weights of one causal LM. Also reused as the gradient container:
/// `backward` returns a `Model` of the same shape holding dCE/dθ.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub tok_emb: Tensor<S>,
    pub pos_emb: Tensor<S>,
    pub layers: Vec<Block<S>>,
    pub ln_f: LayerNorm<S>,
}

fn layer_norm_init<S: Scalar>(d: usize, gain: S) -> LayerNorm<S> {
    LayerNorm {
        gain: Tensor::filled(1, d, gain),
        bias: Tensor::zeros(1, d),
    }
}

impl<S: Scalar> Model<S> {
    /// Seeded init: N(0, 0.02) for embeddings and projections, layer-norm
    /// gains 1 and biases 0. Same (config, seed) gives identical weights.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        let mut randn = |rows: usize, cols: usize| -> Tensor<S> {
            let data = (0..rows * cols)
                .map(|_| S::from_f64_(normal.sample(&mut rng)))
                .collect();
            Tensor { data, rows, cols }
        };
        let d = config.d_model;
        let layers = (0..config.n_layers)
            .map(|_| Block {
                ln1: layer_norm_init(d, S::one()),
                w_qkv: randn(d, 3 * d),
                b_qkv: Tensor::zeros(1, 3 * d),
                w_proj: randn(d, d),
                b_proj: Tensor::zeros(1, d),
                ln2: layer_norm_init(d, S::one()),
                w_ff1: randn(d, config.d_ff),
                b_ff1: Tensor::zeros(1, config.d_ff),
                w_ff2: randn(config.d_ff, d),
                b_ff2: Tensor::zeros(1, d),
            })
            .collect();
        Ok(Model {
            tok_emb: randn(config.vocab_size, d),
            pos_emb: randn(config.context_len, d),
            layers,
            ln_f: layer_norm_init(d, S::one()),
            config,
        })
    }

    /// Same shape, all tensors zero. Gradient and optimizer-state container.
    pub fn zeros_like(&self) -> Self {
        Model::zeros(self.config)
    }

    /// All-zero model of the given shape.
    pub fn zeros(config: ModelConfig) -> Self {
        let d = config.d_model;
        Model {
            config,
            tok_emb: Tensor::zeros(config.vocab_size, d),
            pos_emb: Tensor::zeros(config.context_len, d),
            layers: (0..config.n_layers)
                .map(|_| Block {
                    ln1: LayerNorm {
                        gain: Tensor::zeros(1, d),
                        bias: Tensor::zeros(1, d),
                    },
                    w_qkv: Tensor::zeros(d, 3 * d),
                    b_qkv: Tensor::zeros(1, 3 * d),
                    w_proj: Tensor::zeros(d, d),
                    b_proj: Tensor::zeros(1, d),
                    ln2: LayerNorm {
                        gain: Tensor::zeros(1, d),
                        bias: Tensor::zeros(1, d),
                    },
                    w_ff1: Tensor::zeros(d, config.d_ff),
                    b_ff1: Tensor::zeros(1, config.d_ff),
                    w_ff2: Tensor::zeros(config.d_ff, d),
                    b_ff2: Tensor::zeros(1, d),
                })
                .collect(),
            ln_f: LayerNorm {
                gain: Tensor::zeros(1, d),
                bias: Tensor::zeros(1, d),
            },
        }
    }

    /// Named tensors in a fixed order; the serialization and optimizer
    /// contract both rely on this ordering.
    pub fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<(String, &Tensor<S>)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.ln1.gain"), &l.ln1.gain));
            out.push((format!("layer{i}.ln1.bias"), &l.ln1.bias));
            out.push((format!("layer{i}.w_qkv"), &l.w_qkv));
            out.push((format!("layer{i}.b_qkv"), &l.b_qkv));
            out.push((format!("layer{i}.w_proj"), &l.w_proj));
            out.push((format!("layer{i}.b_proj"), &l.b_proj));
            out.push((format!("layer{i}.ln2.gain"), &l.ln2.gain));
            out.push((format!("layer{i}.ln2.bias"), &l.ln2.bias));
            out.push((format!("layer{i}.w_ff1"), &l.w_ff1));
            out.push((format!("layer{i}.b_ff1"), &l.b_ff1));
            out.push((format!("layer{i}.w_ff2"), &l.w_ff2));
            out.push((format!("layer{i}.b_ff2"), &l.b_ff2));
        }
        out.push(("ln_f.gain".into(), &self.ln_f.gain));
        out.push(("ln_f.bias".into(), &self.ln_f.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = vec![
            ("tok_emb".into(), &mut self.tok_emb),
            ("pos_emb".into(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.ln1.gain"), &mut l.ln1.gain));
            out.push((format!("layer{i}.ln1.bias"), &mut l.ln1.bias));
            out.push((format!("layer{i}.w_qkv"), &mut l.w_qkv));
            out.push((format!("layer{i}.b_qkv"), &mut l.b_qkv));
            out.push((format!("layer{i}.w_proj"), &mut l.w_proj));
            out.push((format!("layer{i}.b_proj"), &mut l.b_proj));
            out.push((format!("layer{i}.ln2.gain"), &mut l.ln2.gain));
            out.push((format!("layer{i}.ln2.bias"), &mut l.ln2.bias));
            out.push((format!("layer{i}.w_ff1"), &mut l.w_ff1));
            out.push((format!("layer{i}.b_ff1"), &mut l.b_ff1));
            out.push((format!("layer{i}.w_ff2"), &mut l.w_ff2));
            out.push((format!("layer{i}.b_ff2"), &mut l.b_ff2));
        }
        out.push(("ln_f.gain".into(), &mut self.ln_f.gain));
        out.push(("ln_f.bias".into(), &mut self.ln_f.bias));
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }
}
