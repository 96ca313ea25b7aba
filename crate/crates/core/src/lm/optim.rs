//! Elementwise SGD and Adam. Update arithmetic runs at f64 and is cast
//! back to the weight type, so f32 training is still deterministic.

use crate::error::{AlmError, Result};
use crate::scalar::Scalar;

use super::Model;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn check_finite<S: Scalar>(grads: &Model<S>) -> Result<()> {
    for (name, t) in grads.tensors() {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(AlmError::NonFiniteGradient(name));
        }
    }
    Ok(())
}

pub fn sgd_step<S: Scalar>(params: &mut Model<S>, grads: &Model<S>, lr: f64) -> Result<()> {
    check_finite(grads)?;
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (pv, gv) in p.data.iter_mut().zip(g.data.iter()) {
            *pv = S::from_f64_(pv.to_f64_() - lr * gv.to_f64_());
        }
    }
    Ok(())
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub m: Model<S>,
    pub v: Model<S>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &Model<S>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

pub fn adam_step<S: Scalar>(
    params: &mut Model<S>,
    grads: &Model<S>,
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<()> {
    check_finite(grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()))
    {
        for ((pv, gv), (mv, vv)) in p
            .data
            .iter_mut()
            .zip(g.data.iter())
            .zip(m.data.iter_mut().zip(v.data.iter_mut()))
        {
            let gf = gv.to_f64_();
            let mf = ADAM_BETA1 * mv.to_f64_() + (1.0 - ADAM_BETA1) * gf;
            let vf = ADAM_BETA2 * vv.to_f64_() + (1.0 - ADAM_BETA2) * gf * gf;
            *mv = S::from_f64_(mf);
            *vv = S::from_f64_(vf);
            let update = lr * (mf / bc1) / ((vf / bc2).sqrt() + ADAM_EPS);
            *pv = S::from_f64_(pv.to_f64_() - update);
        }
    }
    Ok(())
}
