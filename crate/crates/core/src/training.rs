//! Builds the set of authorial language models: one shared base model
//! pretrained on the pooled corpus, then one independent fine-tune per
//! candidate author. Fine-tunes share no mutable state, so per-author
//! parallelism cannot change the result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Dataset;
use crate::error::{AlmError, Result};
use crate::lm::{adam_step, AdamState, Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenSequence, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Windows per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            pretrain_epochs: 3,
            finetune_epochs: 100,
            batch_size: 8,
            lr_pretrain: 3e-4,
            lr_finetune: 3e-4,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(AlmError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr_pretrain > 0.0) || !(self.lr_finetune > 0.0) {
            return Err(AlmError::InvalidConfig("learning rates must be > 0".into()));
        }
        Ok(())
    }
}

/// One fine-tuned model per candidate author, sharing a vocab and config.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmSet {
    pub authors: Vec<String>,
    /// Index-aligned with `authors`.
    pub models: Vec<Model<f32>>,
    pub base: Model<f32>,
    pub vocab: Vocab,
    pub model_config: ModelConfig,
    pub training: TrainingConfig,
    pub dataset_fingerprint: String,
}

/// Concatenates sequences into one stream and cuts it into non-overlapping
/// context-length windows; a trailing partial window is kept if it still
/// has a predictable position.
pub fn pack_windows(seqs: &[TokenSequence], context_len: usize) -> Vec<Vec<u32>> {
    let stream: Vec<u32> = seqs.iter().flat_map(|s| s.ids.iter().copied()).collect();
    stream
        .chunks(context_len)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

fn add_scaled<S: Scalar>(acc: &mut Model<S>, g: &Model<S>, scale: f64) {
    for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        for (av, bv) in a.data.iter_mut().zip(b.data.iter()) {
            *av = *av + S::from_f64_(bv.to_f64_() * scale);
        }
    }
}

/// One pass per epoch over the windows in a seeded shuffled order.
fn train_epochs<S: Scalar>(
    model: &mut Model<S>,
    windows: &[Vec<u32>],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
    progress: Option<&str>,
) -> Result<()> {
    if windows.is_empty() {
        return Err(AlmError::CorpusTooSmall);
    }
    let mut state = AdamState::new(model);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(batch_size) {
            let mut acc = model.zeros_like();
            let inv = 1.0 / chunk.len() as f64;
            for &w in chunk {
                let (loss, grads) = model.loss_and_grad(&windows[w])?;
                epoch_loss += loss;
                seen += 1;
                add_scaled(&mut acc, &grads, inv);
            }
            adam_step(model, &acc, &mut state, lr)?;
        }
        if let Some(label) = progress {
            eprintln!(
                "[{label}] epoch {}/{epochs} mean_ce {:.4}",
                epoch + 1,
                epoch_loss / seen as f64
            );
        }
    }
    Ok(())
}

/// Deterministic stand-in for a pretrained checkpoint: a fresh model
/// trained on the pooled corpus of every candidate author.
pub fn pretrain_base(
    pooled: &[TokenSequence],
    model_config: ModelConfig,
    config: &TrainingConfig,
    progress: bool,
) -> Result<Model<f32>> {
    config.validate()?;
    let windows = pack_windows(pooled, model_config.context_len);
    if windows.is_empty() {
        return Err(AlmError::CorpusTooSmall);
    }
    let mut model = Model::init(model_config, config.seed)?;
    if config.pretrain_epochs == 0 {
        return Ok(model);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    train_epochs(
        &mut model,
        &windows,
        config.pretrain_epochs,
        config.batch_size,
        config.lr_pretrain,
        &mut rng,
        progress.then_some("base"),
    )?;
    Ok(model)
}

/// Fine-tunes a copy of the base on one author's packed token stream.
/// The shuffle stream is seeded with seed XOR author_index so scheduling
/// order across authors cannot matter.
pub fn finetune_author(
    base: &Model<f32>,
    author_label: &str,
    author_index: usize,
    author_corpus: &[TokenSequence],
    config: &TrainingConfig,
    progress: bool,
) -> Result<Model<f32>> {
    config.validate()?;
    let windows = pack_windows(author_corpus, base.config.context_len);
    if windows.is_empty() {
        return Err(AlmError::AuthorUntrainable(author_label.to_string()));
    }
    let mut model = base.clone();
    if config.finetune_epochs == 0 {
        return Ok(model);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ author_index as u64);
    train_epochs(
        &mut model,
        &windows,
        config.finetune_epochs,
        config.batch_size,
        config.lr_finetune,
        &mut rng,
        progress.then_some(author_label),
    )?;
    Ok(model)
}

/// Full pipeline: shared vocab (trained on the pooled training split when
/// not supplied), pooled base pretrain, then n independent fine-tunes.
pub fn build_alm_set(
    dataset: &Dataset,
    model_config: ModelConfig,
    config: &TrainingConfig,
    vocab: Option<Vocab>,
    parallel: bool,
    progress: bool,
) -> Result<AlmSet> {
    model_config.validate()?;
    config.validate()?;
    if dataset.authors.len() < 2 {
        return Err(AlmError::TooFewAuthors(dataset.authors.len()));
    }

    let vocab = match vocab {
        Some(v) => v,
        None => {
            let texts: Vec<&[u8]> = dataset.train_texts().map(|(_, t)| t).collect();
            Vocab::train(&texts, model_config.vocab_size)?
        }
    };

    let per_author: Vec<(String, Vec<TokenSequence>)> = dataset
        .authors
        .iter()
        .map(|author| {
            let seqs: Vec<TokenSequence> = dataset
                .train_texts()
                .filter(|(a, _)| *a == author)
                .map(|(_, t)| vocab.encode(t))
                .collect();
            let total: usize = seqs.iter().map(|s| s.len()).sum();
            if total < 2 {
                return Err(AlmError::AuthorUntrainable(author.clone()));
            }
            Ok((author.clone(), seqs))
        })
        .collect::<Result<_>>()?;

    let pooled: Vec<TokenSequence> = per_author
        .iter()
        .flat_map(|(_, seqs)| seqs.iter().cloned())
        .collect();
    let base = pretrain_base(&pooled, model_config, config, progress)?;

    let finetune_one = |(index, (author, seqs)): (usize, &(String, Vec<TokenSequence>))| {
        finetune_author(&base, author, index, seqs, config, progress)
    };
    let models: Vec<Model<f32>> = if parallel {
        per_author
            .par_iter()
            .enumerate()
            .map(finetune_one)
            .collect::<Result<_>>()?
    } else {
        per_author
            .iter()
            .enumerate()
            .map(finetune_one)
            .collect::<Result<_>>()?
    };

    Ok(AlmSet {
        authors: per_author.into_iter().map(|(a, _)| a).collect(),
        models,
        base,
        vocab,
        model_config,
        training: *config,
        dataset_fingerprint: dataset.fingerprint(),
    })
}
