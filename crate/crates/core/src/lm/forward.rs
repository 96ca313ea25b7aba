//! Forward pass with activation cache, plus stabilized cross-entropy.

use crate::error::{AlmError, Result};
use crate::scalar::Scalar;

use super::{matmul, matmul_a_bt, Model, Tensor, LAYERNORM_EPS};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Per-row layer-norm statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LnCache<S> {
    pub normed: Tensor<S>, // x_hat, before gain/bias
    pub out: Tensor<S>,
    pub rstd: Vec<S>,
}

pub(crate) fn layer_norm<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
) -> LnCache<S> {
    let d = x.cols;
    let inv_d = S::from_f64_(1.0 / d as f64);
    let eps = S::from_f64_(LAYERNORM_EPS);
    let mut normed = Tensor::zeros(x.rows, d);
    let mut out = Tensor::zeros(x.rows, d);
    let mut rstds = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mut mean = S::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = S::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let rstd = (var + eps).sqrt().recip();
        rstds.push(rstd);
        let nrow = normed.row_mut(r);
        for (n, &v) in nrow.iter_mut().zip(row.iter()) {
            *n = (v - mean) * rstd;
        }
        let orow = out.row_mut(r);
        for ((o, &n), (&g, &b)) in orow
            .iter_mut()
            .zip(normed.row(r).iter())
            .zip(gain.data.iter().zip(bias.data.iter()))
        {
            *o = n * g + b;
        }
    }
    LnCache {
        normed,
        out,
        rstd: rstds,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache<S> {
    pub ln1: LnCache<S>,
    pub qkv: Tensor<S>,
    /// Causal softmax weights, one t x t tensor per head.
    pub probs: Vec<Tensor<S>>,
    /// Concatenated per-head context, before the output projection.
    pub ctx: Tensor<S>,
    pub ln2: LnCache<S>,
    pub ff_pre: Tensor<S>,
    pub ff_act: Tensor<S>,
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct Cache<S> {
    pub(crate) blocks: Vec<BlockCache<S>>,
    pub(crate) ln_f: LnCache<S>,
}

impl<S: Scalar> Model<S> {
    /// Logits row i scores the token at position i+1 given tokens 0..=i.
    pub fn forward(&self, ids: &[u32]) -> Result<Tensor<S>> {
        Ok(self.forward_cached(ids)?.0)
    }

    pub fn forward_cached(&self, ids: &[u32]) -> Result<(Tensor<S>, Cache<S>)> {
        let cfg = &self.config;
        let t = ids.len();
        if t == 0 || t > cfg.context_len {
            return Err(AlmError::BadSequenceLength {
                len: t,
                context_len: cfg.context_len,
            });
        }
        for (position, &id) in ids.iter().enumerate() {
            if id as usize >= cfg.vocab_size {
                return Err(AlmError::TokenOutOfRange {
                    id,
                    vocab_size: cfg.vocab_size,
                    position,
                });
            }
        }
        let d = cfg.d_model;
        let mut x = Tensor::zeros(t, d);
        for (i, &id) in ids.iter().enumerate() {
            let tok = self.tok_emb.row(id as usize);
            let pos = self.pos_emb.row(i);
            for ((o, &a), &b) in x.row_mut(i).iter_mut().zip(tok.iter()).zip(pos.iter()) {
                *o = a + b;
            }
        }

        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for block in &self.layers {
            let x_in = x;
            let ln1 = layer_norm(&x_in, &block.ln1.gain, &block.ln1.bias);
            let mut qkv = matmul(&ln1.out, &block.w_qkv);
            for r in 0..t {
                for (v, &b) in qkv.row_mut(r).iter_mut().zip(block.b_qkv.data.iter()) {
                    *v = *v + b;
                }
            }
            let (probs, ctx) = causal_attention(cfg.n_heads, cfg.head_dim(), &qkv);
            let mut attn_out = matmul(&ctx, &block.w_proj);
            for r in 0..t {
                for (v, &b) in attn_out.row_mut(r).iter_mut().zip(block.b_proj.data.iter()) {
                    *v = *v + b;
                }
            }
            let mut res1 = x_in.clone();
            for (o, &a) in res1.data.iter_mut().zip(attn_out.data.iter()) {
                *o = *o + a;
            }
            let ln2 = layer_norm(&res1, &block.ln2.gain, &block.ln2.bias);
            let mut ff_pre = matmul(&ln2.out, &block.w_ff1);
            for r in 0..t {
                for (v, &b) in ff_pre.row_mut(r).iter_mut().zip(block.b_ff1.data.iter()) {
                    *v = *v + b;
                }
            }
            let mut ff_act = Tensor::zeros(t, cfg.d_ff);
            for (o, &p) in ff_act.data.iter_mut().zip(ff_pre.data.iter()) {
                *o = S::from_f64_(gelu(p.to_f64_()));
            }
            let mut ff_out = matmul(&ff_act, &block.w_ff2);
            for r in 0..t {
                for (v, &b) in ff_out.row_mut(r).iter_mut().zip(block.b_ff2.data.iter()) {
                    *v = *v + b;
                }
            }
            let mut x_next = res1.clone();
            for (o, &f) in x_next.data.iter_mut().zip(ff_out.data.iter()) {
                *o = *o + f;
            }
            blocks.push(BlockCache {
                ln1,
                qkv,
                probs,
                ctx,
                ln2,
                ff_pre,
                ff_act,
            });
            x = x_next;
        }

        let ln_f = layer_norm(&x, &self.ln_f.gain, &self.ln_f.bias);
        // Weight-tied head: logits = ln_f_out @ tok_emb^T.
        let logits = matmul_a_bt(&ln_f.out, &self.tok_emb);
        Ok((logits, Cache { blocks, ln_f }))
    }
}

/// Per-head causal softmax attention over a packed [Q | K | V] tensor.
fn causal_attention<S: Scalar>(
    n_heads: usize,
    head_dim: usize,
    qkv: &Tensor<S>,
) -> (Vec<Tensor<S>>, Tensor<S>) {
    let t = qkv.rows;
    let d = n_heads * head_dim;
    let scale = S::from_f64_(1.0 / (head_dim as f64).sqrt());
    let mut ctx = Tensor::zeros(t, d);
    let mut all_probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qo = h * head_dim;
        let ko = d + h * head_dim;
        let vo = 2 * d + h * head_dim;
        let mut probs = Tensor::zeros(t, t);
        for i in 0..t {
            let qi = &qkv.row(i)[qo..qo + head_dim];
            // scores over j <= i, stabilized softmax
            let mut max = S::neg_infinity();
            let mut scores = vec![S::zero(); i + 1];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &qkv.row(j)[ko..ko + head_dim];
                let mut dot = S::zero();
                for (&a, &b) in qi.iter().zip(kj.iter()) {
                    dot = dot + a * b;
                }
                *s = dot * scale;
                if *s > max {
                    max = *s;
                }
            }
            let mut denom = S::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                denom = denom + *s;
            }
            let inv = denom.recip();
            let prow = probs.row_mut(i);
            for (j, &s) in scores.iter().enumerate() {
                prow[j] = s * inv;
            }
            // ctx_i = sum_j p_ij v_j
            for j in 0..=i {
                let p = probs.at(i, j);
                let vj = &qkv.row(j)[vo..vo + head_dim];
                let crow = &mut ctx.row_mut(i)[qo..qo + head_dim];
                for (c, &v) in crow.iter_mut().zip(vj.iter()) {
                    *c = *c + p * v;
                }
            }
        }
        all_probs.push(probs);
    }
    (all_probs, ctx)
}

/// Mean next-token cross-entropy in nats, accumulated at f64.
///
/// Logits row count must equal `targets.len()`; positions 0..t-2 predict
/// targets 1..t-1 and the mean is over the t-1 scored positions.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, targets: &[u32]) -> Result<f64> {
    let t = targets.len();
    if t < 2 {
        return Err(AlmError::TooShort(t));
    }
    assert_eq!(
        logits.rows, t,
        "logits rows {} != target count {t}",
        logits.rows
    );
    let mut total = 0.0f64;
    for i in 0..t - 1 {
        let target = targets[i + 1] as usize;
        assert!(target < logits.cols, "target id out of vocab");
        let row = logits.row(i);
        let mut max = f64::NEG_INFINITY;
        for &v in row {
            let v = v.to_f64_();
            if v > max {
                max = v;
            }
        }
        let mut denom = 0.0f64;
        for &v in row {
            denom += (v.to_f64_() - max).exp();
        }
        total += max + denom.ln() - row[target].to_f64_();
    }
    Ok(total / (t - 1) as f64)
}
