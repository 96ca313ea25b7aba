//! Evaluation protocol: macro-average accuracy, per-author accuracy,
//! confusion matrix, and text-ablation curves over truncated test texts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{AlmError, Result};
use crate::tokenizer::{TokenSequence, Vocab};
use crate::training::AlmSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorReport {
    pub author: String,
    pub text_count: usize,
    pub token_count: usize,
    pub mean_tokens_per_text: f64,
    /// correct / text_count; sub-2-token texts count as incorrect.
    pub accuracy: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_author: Vec<AuthorReport>,
    /// Arithmetic mean of per-author accuracies over authors with test texts.
    pub macro_avg_accuracy: f64,
    /// Row = true author, column = predicted author; scored texts only.
    pub confusion: Vec<Vec<u64>>,
    pub total_texts: usize,
    pub total_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub length: usize,
    pub macro_avg_accuracy: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub points: Vec<AblationPoint>,
}

/// Grid covering every threshold the ablation study reports, with
/// log-spaced fill.
pub const DEFAULT_ABLATION_GRID: &[usize] = &[2, 5, 10, 20, 40, 70, 100, 200, 400, 800];

/// Attributes every test text and aggregates per-author accuracy, the
/// macro average, and the confusion matrix.
pub fn evaluate(
    alms: &AlmSet,
    test_set: &[(String, Vec<u8>)],
    parallel: bool,
) -> Result<EvaluationReport> {
    let encoded = encode_test_set(alms, test_set)?;
    evaluate_tokens(alms, &encoded, parallel)
}

/// (author index, token sequence) pairs ready for truncation or scoring.
pub fn encode_test_set(
    alms: &AlmSet,
    test_set: &[(String, Vec<u8>)],
) -> Result<Vec<(usize, TokenSequence)>> {
    test_set
        .iter()
        .map(|(author, text)| {
            let idx = alms
                .authors
                .iter()
                .position(|a| a == author)
                .ok_or_else(|| AlmError::UnknownAuthor(author.clone()))?;
            Ok((idx, alms.vocab.encode(text)))
        })
        .collect()
}

pub fn evaluate_tokens(
    alms: &AlmSet,
    items: &[(usize, TokenSequence)],
    parallel: bool,
) -> Result<EvaluationReport> {
    let n = alms.authors.len();
    let predict = |(true_idx, seq): &(usize, TokenSequence)| -> Result<(usize, Option<usize>, usize)> {
        if seq.len() < 2 {
            return Ok((*true_idx, None, seq.len()));
        }
        let result = alms.attribute_tokens("", &seq.ids)?;
        let pred = alms
            .authors
            .iter()
            .position(|a| *a == result.predicted_author)
            .expect("prediction is one of the set's authors");
        Ok((*true_idx, Some(pred), seq.len()))
    };
    let outcomes: Vec<(usize, Option<usize>, usize)> = if parallel {
        items.par_iter().map(predict).collect::<Result<_>>()?
    } else {
        items.iter().map(predict).collect::<Result<_>>()?
    };

    let mut confusion = vec![vec![0u64; n]; n];
    let mut text_count = vec![0usize; n];
    let mut token_count = vec![0usize; n];
    let mut correct = vec![0usize; n];
    let mut skipped = vec![0usize; n];
    for (true_idx, pred, tokens) in outcomes {
        text_count[true_idx] += 1;
        token_count[true_idx] += tokens;
        match pred {
            Some(p) => {
                confusion[true_idx][p] += 1;
                if p == true_idx {
                    correct[true_idx] += 1;
                }
            }
            None => skipped[true_idx] += 1,
        }
    }

    let per_author: Vec<AuthorReport> = (0..n)
        .map(|i| AuthorReport {
            author: alms.authors[i].clone(),
            text_count: text_count[i],
            token_count: token_count[i],
            mean_tokens_per_text: if text_count[i] > 0 {
                token_count[i] as f64 / text_count[i] as f64
            } else {
                0.0
            },
            accuracy: if text_count[i] > 0 {
                correct[i] as f64 / text_count[i] as f64
            } else {
                0.0
            },
            skipped: skipped[i],
        })
        .collect();
    let with_texts: Vec<&AuthorReport> = per_author.iter().filter(|a| a.text_count > 0).collect();
    let macro_avg_accuracy = if with_texts.is_empty() {
        0.0
    } else {
        with_texts.iter().map(|a| a.accuracy).sum::<f64>() / with_texts.len() as f64
    };
    Ok(EvaluationReport {
        per_author,
        macro_avg_accuracy,
        confusion,
        total_texts: items.len(),
        total_skipped: skipped.iter().sum(),
    })
}

/// For each grid length L, evaluates on test texts truncated to their
/// first min(L, t) tokens. Truncation is applied to token ids after
/// encoding; texts too short to score are kept and counted as skipped.
pub fn ablate(
    alms: &AlmSet,
    items: &[(usize, TokenSequence)],
    grid: &[usize],
    parallel: bool,
) -> Result<AblationCurve> {
    if grid.is_empty() {
        return Err(AlmError::InvalidConfig("ablation grid is empty".into()));
    }
    let mut grid: Vec<usize> = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid[0] < 2 {
        return Err(AlmError::InvalidConfig(format!(
            "ablation grid length {} < 2",
            grid[0]
        )));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &length in &grid {
        let truncated: Vec<(usize, TokenSequence)> = items
            .iter()
            .map(|(a, seq)| {
                let keep = length.min(seq.len());
                (*a, TokenSequence::new(seq.ids[..keep].to_vec()))
            })
            .collect();
        let report = evaluate_tokens(alms, &truncated, parallel)?;
        points.push(AblationPoint {
            length,
            macro_avg_accuracy: report.macro_avg_accuracy,
            skipped: report.total_skipped,
        });
    }
    Ok(AblationCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub author_count: usize,
    pub text_count: usize,
    pub token_count: usize,
    pub texts_per_author: f64,
    /// Mean token count of test-split texts.
    pub mean_test_text_len: f64,
}

pub fn dataset_stats(dataset: &Dataset, vocab: &Vocab) -> DatasetStats {
    let mut token_count = 0usize;
    let mut test_tokens = 0usize;
    let mut test_texts = 0usize;
    for r in &dataset.records {
        let t = vocab.encode(r.text.as_bytes()).len();
        token_count += t;
        if r.split == crate::corpus::Split::Test {
            test_tokens += t;
            test_texts += 1;
        }
    }
    let author_count = dataset.authors.len();
    DatasetStats {
        author_count,
        text_count: dataset.records.len(),
        token_count,
        texts_per_author: dataset.records.len() as f64 / author_count.max(1) as f64,
        mean_test_text_len: if test_texts > 0 {
            test_tokens as f64 / test_texts as f64
        } else {
            0.0
        },
    }
}

/// One row per author plus a final MACRO_AVG row.
pub fn report_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("author,text_count,token_count,mean_tokens_per_text,accuracy_pct\n");
    for a in &report.per_author {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            a.author,
            a.text_count,
            a.token_count,
            a.mean_tokens_per_text,
            a.accuracy * 100.0
        ));
    }
    out.push_str(&format!(
        "MACRO_AVG,,,,{}\n",
        report.macro_avg_accuracy * 100.0
    ));
    out
}

pub fn ablation_csv(curve: &AblationCurve) -> String {
    let mut out = String::from("length,macro_avg_accuracy,skipped\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{},{}\n",
            p.length, p.macro_avg_accuracy, p.skipped
        ));
    }
    out
}

pub fn confusion_csv(authors: &[String], confusion: &[Vec<u64>]) -> String {
    let mut out = String::from("true\\pred");
    for a in authors {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for (a, row) in authors.iter().zip(confusion.iter()) {
        out.push_str(a);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn stats_csv(stats: &DatasetStats) -> String {
    format!(
        "authors,texts,tokens,texts_per_author,mean_test_text_len\n{},{},{},{},{}\n",
        stats.author_count,
        stats.text_count,
        stats.token_count,
        stats.texts_per_author,
        stats.mean_test_text_len
    )
}
