//! Document perplexity and minimum-perplexity authorship prediction.
//!
//! Scoring is defined over anything that can produce causal next-token
//! logits, so tests can swap in explicit conditional-table models and
//! check the transformer path against a chain-rule oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AlmError, Result};
use crate::lm::{cross_entropy, Model, Tensor};
use crate::scalar::Scalar;
use crate::training::AlmSet;

/// CE above this many nats is reported as an overflow sentinel instead of
/// letting `exp` produce Inf silently.
pub const PPL_CLAMP_NATS: f64 = 700.0;

/// A frozen causal language model usable for scoring.
pub trait CausalLm: Sync {
    fn vocab_size(&self) -> usize;
    fn context_len(&self) -> usize;
    /// Logits for one window (`ids.len() <= context_len`); row i scores
    /// the token at position i+1 given ids 0..=i.
    fn window_logits(&self, ids: &[u32]) -> Result<Tensor<f64>>;
}

impl<S: Scalar> CausalLm for Model<S> {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn context_len(&self) -> usize {
        self.config.context_len
    }

    fn window_logits(&self, ids: &[u32]) -> Result<Tensor<f64>> {
        let logits = self.forward(ids)?;
        Ok(Tensor {
            data: logits.data.iter().map(|v| v.to_f64_()).collect(),
            rows: logits.rows,
            cols: logits.cols,
        })
    }
}

/// Exponentiated mean negative log likelihood for one document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerplexityScore {
    pub value: f64,
    pub mean_ce: f64,
    /// Scored positions: t minus one unconditioned token per window.
    pub token_count: usize,
    pub windows: usize,
    pub overflowed: bool,
}

/// Token-weighted mean next-token CE over non-overlapping context windows,
/// plus the scored-position count. First token of every window is
/// unconditioned and excluded, so scored = t - windows.
pub fn mean_nll<M: CausalLm + ?Sized>(model: &M, ids: &[u32]) -> Result<(f64, usize)> {
    let (mean, scored, _) = windowed_nll(model, ids)?;
    Ok((mean, scored))
}

fn windowed_nll<M: CausalLm + ?Sized>(model: &M, ids: &[u32]) -> Result<(f64, usize, usize)> {
    if ids.len() < 2 {
        return Err(AlmError::QueryTooShort);
    }
    let ctx = model.context_len();
    let mut total = 0.0f64;
    let mut scored = 0usize;
    let mut windows = 0usize;
    for chunk in ids.chunks(ctx) {
        windows += 1;
        if chunk.len() < 2 {
            continue; // a lone trailing token has no predictable position
        }
        let logits = model.window_logits(chunk)?;
        let ce = cross_entropy(&logits, chunk)?;
        let n = chunk.len() - 1;
        total += ce * n as f64;
        scored += n;
    }
    Ok((total / scored as f64, scored, windows))
}

pub fn perplexity<M: CausalLm + ?Sized>(model: &M, ids: &[u32]) -> Result<PerplexityScore> {
    let (mean_ce, scored, windows) = windowed_nll(model, ids)?;
    let overflowed = mean_ce > PPL_CLAMP_NATS;
    Ok(PerplexityScore {
        value: if overflowed { f64::INFINITY } else { mean_ce.exp() },
        mean_ce,
        token_count: scored,
        windows,
        overflowed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorScore {
    pub author: String,
    #[serde(flatten)]
    pub score: PerplexityScore,
}

/// Per-author perplexities and the argmin prediction for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub query_id: String,
    pub predicted_author: String,
    /// Second-lowest minus lowest perplexity.
    pub margin: f64,
    pub scores: Vec<AuthorScore>,
}

impl AlmSet {
    /// Encodes the query once with the shared vocab and scores it under
    /// every authorial model. Ties break toward the earliest author index.
    pub fn attribute(&self, query_id: &str, query: &[u8]) -> Result<AttributionResult> {
        let ids = self.vocab.encode(query);
        self.attribute_tokens(query_id, &ids.ids)
    }

    pub fn attribute_tokens(&self, query_id: &str, ids: &[u32]) -> Result<AttributionResult> {
        if ids.len() < 2 {
            return Err(AlmError::QueryTooShort);
        }
        let scores: Vec<AuthorScore> = self
            .authors
            .iter()
            .zip(self.models.iter())
            .map(|(author, model)| {
                Ok(AuthorScore {
                    author: author.clone(),
                    score: perplexity(model, ids)?,
                })
            })
            .collect::<Result<_>>()?;
        if scores.iter().all(|s| s.score.overflowed) {
            return Err(AlmError::Unscorable);
        }
        let mut best = 0usize;
        for (i, s) in scores.iter().enumerate() {
            if s.score.value < scores[best].score.value {
                best = i;
            }
        }
        let mut second = f64::INFINITY;
        for (i, s) in scores.iter().enumerate() {
            if i != best && s.score.value < second {
                second = s.score.value;
            }
        }
        Ok(AttributionResult {
            query_id: query_id.to_string(),
            predicted_author: scores[best].author.clone(),
            margin: second - scores[best].score.value,
            scores,
        })
    }

    /// Element-wise `attribute`; per-query failures are recorded in place
    /// and the batch continues. Order is preserved and results do not
    /// depend on whether the batch runs in parallel.
    pub fn attribute_batch(
        &self,
        queries: &[(String, Vec<u8>)],
        parallel: bool,
    ) -> Vec<Result<AttributionResult>> {
        if parallel {
            queries
                .par_iter()
                .map(|(id, text)| self.attribute(id, text))
                .collect()
        } else {
            queries
                .iter()
                .map(|(id, text)| self.attribute(id, text))
                .collect()
        }
    }
}
