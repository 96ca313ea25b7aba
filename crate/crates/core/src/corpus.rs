//! Dataset ingestion, the synthetic desk-scale corpus, and downsampling.
//!
//! Datasets are JSONL: one `{"author": ..., "split": "train"|"test",
//! "text": ...}` object per line. Author order is first appearance.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AlmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub author: String,
    pub split: Split,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    /// First-appearance order, unique.
    pub authors: Vec<String>,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn from_records(records: Vec<Record>) -> Self {
        let mut authors = Vec::new();
        let mut seen = HashSet::new();
        for r in &records {
            if seen.insert(r.author.clone()) {
                authors.push(r.author.clone());
            }
        }
        Dataset { authors, records }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| AlmError::io(path, e))?;
        let reader = BufReader::new(f);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| AlmError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| AlmError::MalformedRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(AlmError::NoRecords {
                path: path.to_path_buf(),
            });
        }
        Ok(Dataset::from_records(records))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| AlmError::io(path, e))
    }

    pub fn train_texts(&self) -> impl Iterator<Item = (&String, &[u8])> {
        self.records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| (&r.author, r.text.as_bytes()))
    }

    pub fn test_texts(&self) -> impl Iterator<Item = (&String, &[u8])> {
        self.records
            .iter()
            .filter(|r| r.split == Split::Test)
            .map(|r| (&r.author, r.text.as_bytes()))
    }

    /// Authors that would fail at train time; loaders warn about these.
    pub fn authors_without_training(&self) -> Vec<&String> {
        self.authors
            .iter()
            .filter(|a| !self.records.iter().any(|r| r.author == **a && r.split == Split::Train))
            .collect()
    }

    /// Content hash, stable under record reordering.
    pub fn fingerprint(&self) -> String {
        let mut canon: Vec<String> = self
            .records
            .iter()
            .map(|r| {
                let split = match r.split {
                    Split::Train => "train",
                    Split::Test => "test",
                };
                format!("{}\u{1f}{}\u{1f}{}", r.author, split, r.text)
            })
            .collect();
        canon.sort();
        let mut hasher = Sha256::new();
        for c in &canon {
            hasher.update((c.len() as u64).to_le_bytes());
            hasher.update(c.as_bytes());
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            write!(hex, "{b:02x}").unwrap();
        }
        hex
    }

    /// Keeps ceil(fraction * count) training texts per author, seeded
    /// uniform sample; the test split is untouched.
    pub fn downsample(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(AlmError::BadFraction(fraction));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep: HashSet<usize> = HashSet::new();
        for author in &self.authors {
            let mut train_idx: Vec<usize> = self
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.author == *author && r.split == Split::Train)
                .map(|(i, _)| i)
                .collect();
            if train_idx.is_empty() {
                continue;
            }
            let want = ((fraction * train_idx.len() as f64).ceil() as usize).max(0);
            if want == 0 {
                return Err(AlmError::DownsampleEmpties(author.clone()));
            }
            train_idx.shuffle(&mut rng);
            keep.extend(train_idx.into_iter().take(want));
        }
        let records = self
            .records
            .iter()
            .enumerate()
            .filter(|(i, r)| r.split == Split::Test || keep.contains(i))
            .map(|(_, r)| r.clone())
            .collect();
        Ok(Dataset::from_records(records))
    }
}

const FUNCTION_WORDS: &[&str] = &[
    "the", "and", "of", "to", "in", "is", "was", "it", "for", "on", "with", "as", "at", "but",
    "not", "so",
];

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = 2 + rng.random_range(0..3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

/// Seeded synthetic dataset: each author is a distinct Markov process over
/// a 40-word inventory drawn from a shared 90-word pool, plus a shared
/// function-word pool, with an 80/20 train/test split. Inventories overlap
/// partially (well under 50% Jaccard), so isolated words are weak evidence
/// and attribution has to accumulate over each author's transition
/// structure — accuracy degrades gracefully on short texts. Desk-scale
/// proxy for a single-register authorship corpus.
pub fn synth_corpus(n_authors: usize, texts_per_author: usize, seed: u64) -> Result<Dataset> {
    if n_authors < 2 {
        return Err(AlmError::TooFewAuthors(n_authors));
    }
    let mut pool_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<String> = Vec::new();
    while pool.len() < 90 {
        let w = pseudo_word(&mut pool_rng);
        if !pool.contains(&w) && !FUNCTION_WORDS.contains(&w.as_str()) {
            pool.push(w);
        }
    }
    let mut records = Vec::new();
    for author_idx in 0..n_authors {
        let author = format!("author_{author_idx}");
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (author_idx as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let mut picks: Vec<usize> = (0..pool.len()).collect();
        picks.shuffle(&mut rng);
        let inventory: Vec<String> = picks[..40].iter().map(|&i| pool[i].clone()).collect();
        // Markov structure: each content word prefers 4 fixed successors.
        let successors: Vec<[usize; 4]> = (0..inventory.len())
            .map(|_| {
                [
                    rng.random_range(0..inventory.len()),
                    rng.random_range(0..inventory.len()),
                    rng.random_range(0..inventory.len()),
                    rng.random_range(0..inventory.len()),
                ]
            })
            .collect();
        let train_count = ((texts_per_author * 4) / 5).max(1);
        for text_idx in 0..texts_per_author {
            let n_words = 60 + rng.random_range(0..60);
            let mut state = rng.random_range(0..inventory.len());
            let mut words: Vec<&str> = Vec::with_capacity(n_words);
            for _ in 0..n_words {
                // Half the stream is the shared pool, stretching how much
                // text it takes before author-specific evidence dominates.
                if rng.random_range(0..2) == 0 {
                    words.push(FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())]);
                } else {
                    state = if rng.random_range(0..4) < 3 {
                        successors[state][rng.random_range(0..4)]
                    } else {
                        rng.random_range(0..inventory.len())
                    };
                    words.push(&inventory[state]);
                }
            }
            let mut text = String::new();
            for (i, w) in words.iter().enumerate() {
                if i > 0 {
                    text.push(' ');
                }
                text.push_str(w);
                if i % 12 == 11 {
                    text.push('.');
                }
            }
            records.push(Record {
                author: author.clone(),
                split: if text_idx < train_count {
                    Split::Train
                } else {
                    Split::Test
                },
                text,
            });
        }
    }
    Ok(Dataset::from_records(records))
}
