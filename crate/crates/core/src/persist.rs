//! Binary model files and ALM-set directories.
//!
//! Model format, little-endian throughout: magic `ALMM`, format version
//! u32, six u32 config fields, then each parameter tensor as (name length
//! u32, name bytes, rank u32, dims u32..., f32 data), and a trailing u64
//! checksum over all preceding bytes. Any single-byte corruption fails
//! the load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AlmError, Result};
use crate::lm::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tokenizer::Vocab;
use crate::training::{AlmSet, TrainingConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"ALMM";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

fn checksum64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn save_model<S: Scalar>(model: &Model<S>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    let c = &model.config;
    for field in [
        c.vocab_size,
        c.context_len,
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.d_ff,
    ] {
        buf.extend_from_slice(&(field as u32).to_le_bytes());
    }
    for (name, tensor) in model.tensors() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(tensor.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(tensor.cols as u32).to_le_bytes());
        for v in &tensor.data {
            buf.extend_from_slice(&v.to_f32_().to_le_bytes());
        }
    }
    let sum = checksum64(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    std::fs::write(path, buf).map_err(|e| AlmError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AlmError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.pos,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bad(&self, reason: impl Into<String>) -> AlmError {
        AlmError::BadFormat {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| AlmError::io(path, e))?;
    if bytes.len() < 8 {
        return Err(AlmError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if checksum64(body) != stored {
        return Err(AlmError::ChecksumMismatch {
            path: path.to_path_buf(),
        });
    }
    let mut r = Reader {
        bytes: body,
        pos: 0,
        path,
    };
    if r.take(4)? != MODEL_MAGIC {
        return Err(r.bad("bad magic"));
    }
    let version = r.u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(r.bad(format!("unsupported format version {version}")));
    }
    let config = ModelConfig {
        vocab_size: r.u32()? as usize,
        context_len: r.u32()? as usize,
        d_model: r.u32()? as usize,
        n_layers: r.u32()? as usize,
        n_heads: r.u32()? as usize,
        d_ff: r.u32()? as usize,
    };
    config
        .validate()
        .map_err(|e| r.bad(format!("bad stored config: {e}")))?;
    let mut model = Model::<f32>::zeros(config);
    for (name, tensor) in model.tensors_mut() {
        let name_len = r.u32()? as usize;
        let got = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| AlmError::BadFormat {
                path: path.to_path_buf(),
                reason: "tensor name is not utf-8".into(),
            })?
            .to_string();
        if got != name {
            return Err(AlmError::BadFormat {
                path: path.to_path_buf(),
                reason: format!("expected tensor `{name}`, found `{got}`"),
            });
        }
        let rank = r.u32()?;
        if rank != 2 {
            return Err(AlmError::BadFormat {
                path: path.to_path_buf(),
                reason: format!("tensor `{name}`: rank {rank} != 2"),
            });
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows != tensor.rows || cols != tensor.cols {
            return Err(AlmError::BadFormat {
                path: path.to_path_buf(),
                reason: format!(
                    "tensor `{name}`: stored shape {rows}x{cols}, expected {}x{}",
                    tensor.rows, tensor.cols
                ),
            });
        }
        let raw = r.take(rows * cols * 4)?;
        for (v, chunk) in tensor.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != body.len() {
        return Err(AlmError::BadFormat {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes after last tensor", body.len() - r.pos),
        });
    }
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetManifest {
    pub format_version: u32,
    pub authors: Vec<String>,
    pub model_config: ModelConfig,
    pub training: TrainingConfig,
    pub dataset_fingerprint: String,
    pub seed: u64,
    pub vocab_file: String,
    pub base_file: String,
    pub author_files: Vec<String>,
}

fn author_file_name(index: usize, label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("author_{index:03}_{safe}.almm")
}

impl AlmSet {
    /// Directory layout: `vocab.almvocab`, `base.almm`, one `.almm` per
    /// author, `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| AlmError::io(dir, e))?;
        let mut written = Vec::new();
        let vocab_path = dir.join("vocab.almvocab");
        self.vocab.save(&vocab_path)?;
        written.push(vocab_path);
        let base_path = dir.join("base.almm");
        save_model(&self.base, &base_path)?;
        written.push(base_path);
        let mut author_files = Vec::new();
        for (i, (author, model)) in self.authors.iter().zip(self.models.iter()).enumerate() {
            let name = author_file_name(i, author);
            let path = dir.join(&name);
            save_model(model, &path)?;
            written.push(path);
            author_files.push(name);
        }
        let manifest = SetManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            authors: self.authors.clone(),
            model_config: self.model_config,
            training: self.training,
            dataset_fingerprint: self.dataset_fingerprint.clone(),
            seed: self.training.seed,
            vocab_file: "vocab.almvocab".into(),
            base_file: "base.almm".into(),
            author_files,
        };
        let manifest_path = dir.join("manifest.json");
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| AlmError::io(&manifest_path, e))?;
        written.push(manifest_path);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<AlmSet> {
        let manifest_path = dir.join("manifest.json");
        let raw = std::fs::read_to_string(&manifest_path)
            .map_err(|e| AlmError::io(&manifest_path, e))?;
        let manifest: SetManifest =
            serde_json::from_str(&raw).map_err(|e| AlmError::BadFormat {
                path: manifest_path.clone(),
                reason: e.to_string(),
            })?;
        if manifest.format_version != MANIFEST_FORMAT_VERSION {
            return Err(AlmError::BadFormat {
                path: manifest_path,
                reason: format!("unsupported manifest version {}", manifest.format_version),
            });
        }
        if manifest.author_files.len() != manifest.authors.len() {
            return Err(AlmError::BadFormat {
                path: manifest_path,
                reason: "author file list does not match author list".into(),
            });
        }
        let vocab = Vocab::load(&dir.join(&manifest.vocab_file))?;
        let base = load_model(&dir.join(&manifest.base_file))?;
        let mut models = Vec::with_capacity(manifest.author_files.len());
        for file in &manifest.author_files {
            let path = dir.join(file);
            let model = load_model(&path)?;
            if model.config != manifest.model_config {
                return Err(AlmError::BadFormat {
                    path,
                    reason: "model config differs from manifest".into(),
                });
            }
            models.push(model);
        }
        if base.config != manifest.model_config {
            return Err(AlmError::BadFormat {
                path: dir.join(&manifest.base_file),
                reason: "base model config differs from manifest".into(),
            });
        }
        Ok(AlmSet {
            authors: manifest.authors,
            models,
            base,
            vocab,
            model_config: manifest.model_config,
            training: manifest.training,
            dataset_fingerprint: manifest.dataset_fingerprint,
        })
    }
}
