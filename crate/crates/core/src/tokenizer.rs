//! Byte-level BPE tokenizer.
//!
//! The base alphabet is the 256 single bytes, so encoding is total and
//! decode(encode(s)) == s for arbitrary byte strings. Merges are learned
//! greedily by pair frequency; ties go to the lexicographically smaller
//! merged byte sequence so training is deterministic across platforms.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{AlmError, Result};

pub const BYTE_VOCAB_SIZE: usize = 256;

/// Ordered token ids; every id is dense in `[0, vocab.size())`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A learned merge: adjacent pair `(left, right)` becomes token `new_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    pub new_id: u32,
}

/// Byte-level BPE vocabulary: 256 base tokens plus an ordered merge list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    merges: Vec<Merge>,
    /// Byte expansion of every token id, base bytes included.
    token_bytes: Vec<Vec<u8>>,
}

impl Vocab {
    /// Byte-only vocabulary with no merges.
    pub fn byte_only() -> Self {
        Vocab {
            merges: Vec::new(),
            token_bytes: (0..BYTE_VOCAB_SIZE as u32).map(|b| vec![b as u8]).collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.token_bytes.len()
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.token_bytes.get(id as usize).map(|v| v.as_slice())
    }

    fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let new_id = self.token_bytes.len() as u32;
        let mut bytes = self.token_bytes[left as usize].clone();
        bytes.extend_from_slice(&self.token_bytes[right as usize]);
        self.token_bytes.push(bytes);
        self.merges.push(Merge { left, right, new_id });
        new_id
    }

    /// Greedy BPE training over raw byte strings.
    ///
    /// Stops at `target_vocab_size` tokens or as soon as no adjacent pair
    /// occurs at least twice, whichever comes first.
    pub fn train(corpus: &[impl AsRef<[u8]>], target_vocab_size: usize) -> Result<Self> {
        if target_vocab_size < BYTE_VOCAB_SIZE {
            return Err(AlmError::VocabTooSmall(target_vocab_size));
        }
        if corpus.iter().all(|s| s.as_ref().is_empty()) {
            return Err(AlmError::EmptyCorpus);
        }
        let mut vocab = Vocab::byte_only();
        let mut work: Vec<Vec<u32>> = corpus
            .iter()
            .map(|s| s.as_ref().iter().map(|&b| b as u32).collect())
            .filter(|s: &Vec<u32>| !s.is_empty())
            .collect();

        while vocab.size() < target_vocab_size {
            let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
            for seq in &work {
                for pair in seq.windows(2) {
                    *counts.entry((pair[0], pair[1])).or_insert(0) += 1;
                }
            }
            let best = counts.into_iter().filter(|&(_, c)| c >= 2).min_by(|a, b| {
                b.1.cmp(&a.1)
                    .then_with(|| vocab.merged_bytes(a.0).cmp(&vocab.merged_bytes(b.0)))
                    .then_with(|| a.0.cmp(&b.0))
            });
            let Some(((left, right), _)) = best else {
                break; // saturated: nothing repeats
            };
            let new_id = vocab.push_merge(left, right);
            for seq in &mut work {
                apply_merge(seq, left, right, new_id);
            }
        }
        Ok(vocab)
    }

    fn merged_bytes(&self, pair: (u32, u32)) -> Vec<u8> {
        let mut b = self.token_bytes[pair.0 as usize].clone();
        b.extend_from_slice(&self.token_bytes[pair.1 as usize]);
        b
    }

    /// Applies the learned merges in order until fixpoint.
    pub fn encode(&self, text: &[u8]) -> TokenSequence {
        let mut ids: Vec<u32> = text.iter().map(|&b| b as u32).collect();
        for m in &self.merges {
            apply_merge(&mut ids, m.left, m.right, m.new_id);
        }
        TokenSequence::new(ids)
    }

    /// Exact inverse of `encode` for ids produced under this vocab.
    pub fn decode(&self, tokens: &TokenSequence) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (position, &id) in tokens.ids.iter().enumerate() {
            let bytes = self
                .token_bytes(id)
                .ok_or(AlmError::TokenOutOfRange {
                    id,
                    vocab_size: self.size(),
                    position,
                })?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// `ALMVOCAB 1` text format: merge count, then one `left right new` per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = String::new();
        buf.push_str("ALMVOCAB 1\n");
        buf.push_str(&format!("{}\n", self.merges.len()));
        for m in &self.merges {
            buf.push_str(&format!("{} {} {}\n", m.left, m.right, m.new_id));
        }
        let mut f = std::fs::File::create(path).map_err(|e| AlmError::io(path, e))?;
        f.write_all(buf.as_bytes()).map_err(|e| AlmError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| AlmError::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let bad = |reason: &str| AlmError::BadFormat {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let header = lines
            .next()
            .transpose()
            .map_err(|e| AlmError::io(path, e))?
            .ok_or_else(|| bad("empty file"))?;
        if header.trim() != "ALMVOCAB 1" {
            return Err(bad("bad magic or version"));
        }
        let count: usize = lines
            .next()
            .transpose()
            .map_err(|e| AlmError::io(path, e))?
            .ok_or_else(|| bad("missing merge count"))?
            .trim()
            .parse()
            .map_err(|_| bad("merge count is not an integer"))?;
        let mut vocab = Vocab::byte_only();
        for i in 0..count {
            let line = lines
                .next()
                .transpose()
                .map_err(|e| AlmError::io(path, e))?
                .ok_or_else(|| bad(&format!("expected {count} merges, got {i}")))?;
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<u32> {
                parts
                    .next()
                    .ok_or_else(|| bad("short merge line"))?
                    .parse()
                    .map_err(|_| bad("merge field is not an integer"))
            };
            let (left, right, new_id) = (next()?, next()?, next()?);
            if left as usize >= vocab.size() || right as usize >= vocab.size() {
                return Err(bad(&format!("merge {i} references unknown token")));
            }
            let got = vocab.push_merge(left, right);
            if got != new_id {
                return Err(bad(&format!(
                    "merge {i}: new id {new_id} is not dense (expected {got})"
                )));
            }
        }
        Ok(vocab)
    }
}

fn apply_merge(seq: &mut Vec<u32>, left: u32, right: u32, new_id: u32) {
    let mut write = 0;
    let mut read = 0;
    while read < seq.len() {
        if read + 1 < seq.len() && seq[read] == left && seq[read + 1] == right {
            seq[write] = new_id;
            read += 2;
        } else {
            seq[write] = seq[read];
            read += 1;
        }
        write += 1;
    }
    seq.truncate(write);
}
