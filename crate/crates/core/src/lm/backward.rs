//! Analytic backpropagation of the mean next-token cross-entropy.

use crate::error::{AlmError, Result};
use crate::scalar::Scalar;

use super::forward::{gelu_grad, Cache, LnCache};
use super::{matmul, matmul_a_bt, matmul_at_b_acc, LayerNorm, Model, Tensor};

/// dx for a layer-norm given d(out); gain/bias grads are accumulated.
fn layer_norm_backward<S: Scalar>(
    dout: &Tensor<S>,
    cache: &LnCache<S>,
    gain: &Tensor<S>,
    grad: &mut LayerNorm<S>,
) -> Tensor<S> {
    let d = dout.cols;
    let inv_d = S::from_f64_(1.0 / d as f64);
    let mut dx = Tensor::zeros(dout.rows, d);
    for r in 0..dout.rows {
        let dy = dout.row(r);
        let xhat = cache.normed.row(r);
        for ((gg, gb), (&dyv, &xh)) in grad
            .gain
            .data
            .iter_mut()
            .zip(grad.bias.data.iter_mut())
            .zip(dy.iter().zip(xhat.iter()))
        {
            *gg = *gg + dyv * xh;
            *gb = *gb + dyv;
        }
        let mut m1 = S::zero();
        let mut m2 = S::zero();
        let mut dxhat = vec![S::zero(); d];
        for (j, dxh) in dxhat.iter_mut().enumerate() {
            *dxh = dy[j] * gain.data[j];
            m1 = m1 + *dxh;
            m2 = m2 + *dxh * xhat[j];
        }
        m1 = m1 * inv_d;
        m2 = m2 * inv_d;
        let rstd = cache.rstd[r];
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = rstd * (dxhat[j] - m1 - xhat[j] * m2);
        }
    }
    dx
}

fn add_col_sums<S: Scalar>(src: &Tensor<S>, acc: &mut Tensor<S>) {
    for r in 0..src.rows {
        for (a, &v) in acc.data.iter_mut().zip(src.row(r).iter()) {
            *a = *a + v;
        }
    }
}

impl<S: Scalar> Model<S> {
    /// Gradient of mean next-token CE w.r.t. every parameter, as a
    /// model-shaped container. Needs the cache from `forward_cached`.
    pub fn backward(&self, ids: &[u32], logits: &Tensor<S>, cache: &Cache<S>) -> Result<Model<S>> {
        let t = ids.len();
        if t < 2 {
            return Err(AlmError::TooShort(t));
        }
        let cfg = &self.config;
        let mut grads = self.zeros_like();

        // d(loss)/d(logits): softmax - onehot on scored rows, zero on the last.
        let inv_n = 1.0 / (t - 1) as f64;
        let mut dlogits = Tensor::zeros(t, cfg.vocab_size);
        for i in 0..t - 1 {
            let row = logits.row(i);
            let mut max = f64::NEG_INFINITY;
            for &v in row {
                max = max.max(v.to_f64_());
            }
            let mut denom = 0.0f64;
            for &v in row {
                denom += (v.to_f64_() - max).exp();
            }
            let drow = dlogits.row_mut(i);
            for (o, &v) in drow.iter_mut().zip(row.iter()) {
                *o = S::from_f64_((v.to_f64_() - max).exp() / denom * inv_n);
            }
            let tgt = ids[i + 1] as usize;
            drow[tgt] = drow[tgt] - S::from_f64_(inv_n);
        }

        // Tied head: logits = ln_f.out @ tok_emb^T.
        let dlnf_out = matmul(&dlogits, &self.tok_emb);
        matmul_at_b_acc(&dlogits, &cache.ln_f.out, &mut grads.tok_emb);
        let mut dx = layer_norm_backward(&dlnf_out, &cache.ln_f, &self.ln_f.gain, &mut grads.ln_f);

        let d = cfg.d_model;
        let nh = cfg.n_heads;
        let dh = cfg.head_dim();
        let scale = S::from_f64_(1.0 / (dh as f64).sqrt());
        for (layer_idx, block) in self.layers.iter().enumerate().rev() {
            let bc = &cache.blocks[layer_idx];
            let gb = &mut grads.layers[layer_idx];

            // x_next = res1 + gelu(ln2(res1) @ W1 + b1) @ W2 + b2
            let dff_out = &dx;
            matmul_at_b_acc(&bc.ff_act, dff_out, &mut gb.w_ff2);
            add_col_sums(dff_out, &mut gb.b_ff2);
            let dff_act = matmul_a_bt(dff_out, &block.w_ff2);
            let mut dff_pre = dff_act;
            for (o, &p) in dff_pre.data.iter_mut().zip(bc.ff_pre.data.iter()) {
                *o = *o * S::from_f64_(gelu_grad(p.to_f64_()));
            }
            matmul_at_b_acc(&bc.ln2.out, &dff_pre, &mut gb.w_ff1);
            add_col_sums(&dff_pre, &mut gb.b_ff1);
            let dln2_out = matmul_a_bt(&dff_pre, &block.w_ff1);
            let mut dres1 = layer_norm_backward(&dln2_out, &bc.ln2, &block.ln2.gain, &mut gb.ln2);
            for (o, &v) in dres1.data.iter_mut().zip(dx.data.iter()) {
                *o = *o + v; // residual path
            }

            // res1 = x_in + (attention(ln1(x_in)) @ W_proj + b_proj)
            let dattn_out = &dres1;
            matmul_at_b_acc(&bc.ctx, dattn_out, &mut gb.w_proj);
            add_col_sums(dattn_out, &mut gb.b_proj);
            let dctx = matmul_a_bt(dattn_out, &block.w_proj);

            let mut dqkv = Tensor::zeros(t, 3 * d);
            for h in 0..nh {
                let qo = h * dh;
                let ko = d + h * dh;
                let vo = 2 * d + h * dh;
                let probs = &bc.probs[h];
                // ds rows are built per query position i over keys j <= i.
                for i in 0..t {
                    let dctx_i = &dctx.row(i)[qo..qo + dh];
                    let prow = probs.row(i);
                    let mut dp = vec![S::zero(); i + 1];
                    for (j, dpj) in dp.iter_mut().enumerate() {
                        let vj = &bc.qkv.row(j)[vo..vo + dh];
                        let mut dot = S::zero();
                        for (&a, &b) in dctx_i.iter().zip(vj.iter()) {
                            dot = dot + a * b;
                        }
                        *dpj = dot;
                        // dv_j += p_ij * dctx_i
                        let p = prow[j];
                        let dv = &mut dqkv.row_mut(j)[vo..vo + dh];
                        for (o, &c) in dv.iter_mut().zip(dctx_i.iter()) {
                            *o = *o + p * c;
                        }
                    }
                    let mut inner = S::zero();
                    for (j, &dpj) in dp.iter().enumerate() {
                        inner = inner + dpj * prow[j];
                    }
                    for (j, &dpj) in dp.iter().enumerate() {
                        let ds = prow[j] * (dpj - inner) * scale;
                        if ds == S::zero() {
                            continue;
                        }
                        let kj: Vec<S> = bc.qkv.row(j)[ko..ko + dh].to_vec();
                        let qi: Vec<S> = bc.qkv.row(i)[qo..qo + dh].to_vec();
                        let dq = &mut dqkv.row_mut(i)[qo..qo + dh];
                        for (o, &k) in dq.iter_mut().zip(kj.iter()) {
                            *o = *o + ds * k;
                        }
                        let dk = &mut dqkv.row_mut(j)[ko..ko + dh];
                        for (o, &q) in dk.iter_mut().zip(qi.iter()) {
                            *o = *o + ds * q;
                        }
                    }
                }
            }
            matmul_at_b_acc(&bc.ln1.out, &dqkv, &mut gb.w_qkv);
            add_col_sums(&dqkv, &mut gb.b_qkv);
            let dln1_out = matmul_a_bt(&dqkv, &block.w_qkv);
            let mut dx_in = layer_norm_backward(&dln1_out, &bc.ln1, &block.ln1.gain, &mut gb.ln1);
            for (o, &v) in dx_in.data.iter_mut().zip(dres1.data.iter()) {
                *o = *o + v; // residual path
            }
            dx = dx_in;
        }

        // Embedding lookups: x0 row i = tok_emb[ids[i]] + pos_emb[i].
        for (i, &id) in ids.iter().enumerate() {
            let src = dx.row(i).to_vec();
            for (o, &v) in grads
                .tok_emb
                .row_mut(id as usize)
                .iter_mut()
                .zip(src.iter())
            {
                *o = *o + v;
            }
            for (o, &v) in grads.pos_emb.row_mut(i).iter_mut().zip(src.iter()) {
                *o = *o + v;
            }
        }
        Ok(grads)
    }

    /// Forward + CE + backward in one call; the unit of training work.
    pub fn loss_and_grad(&self, ids: &[u32]) -> Result<(f64, Model<S>)> {
        let (logits, cache) = self.forward_cached(ids)?;
        let loss = super::cross_entropy(&logits, ids)?;
        let grads = self.backward(ids, &logits, &cache)?;
        Ok((loss, grads))
    }
}
