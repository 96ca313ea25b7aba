//! Acceptance gate. Each test prints one `ACCEPTANCE <n> PASS|FAIL|SKIP`
//! line (visible with `cargo test --test acceptance -- --nocapture`) and
//! fails the build when its criterion does not hold.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use alms::corpus::{synth_corpus, Dataset};
use alms::eval::{
    ablate, dataset_stats, encode_test_set, evaluate_tokens, AblationCurve, EvaluationReport,
    DEFAULT_ABLATION_GRID,
};
use alms::lm::{cross_entropy, Model, ModelConfig, Tensor};
use alms::scoring::{perplexity, CausalLm};
use alms::tokenizer::Vocab;
use alms::training::{build_alm_set, AlmSet, TrainingConfig};
use alms::Result;

fn check(n: u32, ok: bool, detail: String) {
    println!("ACCEPTANCE {n} {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n}: {detail}");
}

// ---------------------------------------------------------------- shared runs

struct Run {
    dataset: Dataset,
    set: AlmSet,
    report: EvaluationReport,
    curve: AblationCurve,
}

fn build_run(seed: u64) -> Run {
    let dataset = synth_corpus(5, 200, seed).expect("synth corpus");
    let training = TrainingConfig {
        finetune_epochs: 20,
        seed,
        ..TrainingConfig::default()
    };
    let set = build_alm_set(&dataset, ModelConfig::desk_default(), &training, None, true, false)
        .expect("training");
    let test_set: Vec<(String, Vec<u8>)> = dataset
        .test_texts()
        .map(|(a, t)| (a.clone(), t.to_vec()))
        .collect();
    let encoded = encode_test_set(&set, &test_set).expect("encode test set");
    let report = evaluate_tokens(&set, &encoded, true).expect("evaluate");
    let curve = ablate(&set, &encoded, DEFAULT_ABLATION_GRID, true).expect("ablate");
    Run {
        dataset,
        set,
        report,
        curve,
    }
}

/// The three full synthetic runs backing criteria 5, 6, 7 and 8.
fn runs() -> &'static [Run] {
    static RUNS: OnceLock<Vec<Run>> = OnceLock::new();
    RUNS.get_or_init(|| [7u64, 8, 9].iter().map(|&s| build_run(s)).collect())
}

// ------------------------------------------------------------------ criteria

#[test]
fn acceptance_01_scale_statement() {
    // The headline 50-author benchmark accuracies (83.6% and 74.9%
    // macro-average) require dozens of GPT-2-scale fine-tunes over
    // millions of tokens. That is out of reach for this repository's
    // test suite, and no test below claims otherwise: the suite is
    // property-based and synthetic-scale. The README carries the same
    // statement for readers.
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .unwrap_or_default();
    let stated = readme.contains("not reproducible") && readme.contains("synthetic");
    check(1, stated, "README must state the desk-scale limitation".into());
}

/// Explicit first-order conditional table; the oracle below never goes
/// through logits, softmax, or log-sum-exp.
struct TableModel {
    probs: Vec<Vec<f64>>,
    context_len: usize,
}

impl CausalLm for TableModel {
    fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn window_logits(&self, ids: &[u32]) -> Result<Tensor<f64>> {
        let v = self.probs.len();
        let mut out = Tensor::zeros(ids.len(), v);
        for (i, &id) in ids.iter().enumerate() {
            for (j, p) in self.probs[id as usize].iter().enumerate() {
                out.row_mut(i)[j] = p.ln();
            }
        }
        Ok(out)
    }
}

#[test]
fn acceptance_02_perplexity_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v = rng.random_range(2..=16usize);
        let t = rng.random_range(2..=8usize);
        let probs: Vec<Vec<f64>> = (0..v)
            .map(|_| {
                let raw: Vec<f64> = (0..v).map(|_| rng.random_range(0.05..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / sum).collect()
            })
            .collect();
        let ids: Vec<u32> = (0..t).map(|_| rng.random_range(0..v as u32)).collect();
        let model = TableModel {
            probs: probs.clone(),
            context_len: 64,
        };
        // Brute-force chain rule straight from the table.
        let mut log_prob = 0.0f64;
        for i in 1..t {
            log_prob += probs[ids[i - 1] as usize][ids[i] as usize].ln();
        }
        let expected = (-log_prob / (t - 1) as f64).exp();
        let got = perplexity(&model, &ids).unwrap().value;
        worst = worst.max((got - expected).abs() / expected);
    }
    check(2, worst <= 1e-9, format!("worst relative error {worst:.3e}"));
}

#[test]
fn acceptance_03_uniform_bound() {
    let mut worst = 0.0f64;
    for v in [2usize, 256, 512] {
        let model = TableModel {
            probs: vec![vec![1.0 / v as f64; v]; v],
            context_len: 128,
        };
        let ids: Vec<u32> = (0..50u32).map(|i| i % v as u32).collect();
        let got = perplexity(&model, &ids).unwrap().value;
        worst = worst.max((got - v as f64).abs() / v as f64);
    }
    check(3, worst <= 1e-6, format!("worst relative error {worst:.3e}"));
}

#[test]
fn acceptance_04_gradient_check() {
    let cfg = ModelConfig {
        vocab_size: 11,
        context_len: 8,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
    };
    let h = 1e-4;
    let mut total_ok = 0usize;
    let mut total_checked = 0usize;
    for seed in 0..5u64 {
        let model = Model::<f64>::init(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4ad);
        let ids: Vec<u32> = (0..6).map(|_| rng.random_range(0..11u32)).collect();
        let (_, grads) = model.loss_and_grad(&ids).unwrap();
        let n_tensors = model.tensors().len();
        for _ in 0..400 {
            let ti = rng.random_range(0..n_tensors);
            let len = model.tensors()[ti].1.data.len();
            let ei = rng.random_range(0..len);
            let analytic = grads.tensors()[ti].1.data[ei];
            if analytic.abs() <= 1e-6 {
                continue;
            }
            let mut probe = model.clone();
            probe.tensors_mut()[ti].1.data[ei] += h;
            let up = cross_entropy(&probe.forward(&ids).unwrap(), &ids).unwrap();
            probe.tensors_mut()[ti].1.data[ei] -= 2.0 * h;
            let down = cross_entropy(&probe.forward(&ids).unwrap(), &ids).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            total_checked += 1;
            if rel < 1e-4 {
                total_ok += 1;
            }
        }
    }
    let ok = total_checked > 500 && total_ok as f64 >= 0.99 * total_checked as f64;
    check(4, ok, format!("{total_ok}/{total_checked} coordinates within 1e-4"));
}

#[test]
fn acceptance_05_end_to_end_synthetic_attribution() {
    let run = &runs()[0]; // seed 7
    let acc = run.report.macro_avg_accuracy;
    check(5, acc >= 0.90, format!("macro-average accuracy {acc:.4} < 0.90"));
}

/// Spearman rank correlation with tie-averaged ranks.
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

#[test]
fn acceptance_06_ablation_trend() {
    let runs = runs();
    // 8 and 64 tokens sit off the default grid; ablate them directly.
    let run = &runs[0];
    let test_set: Vec<(String, Vec<u8>)> = run
        .dataset
        .test_texts()
        .map(|(a, t)| (a.clone(), t.to_vec()))
        .collect();
    let encoded = encode_test_set(&run.set, &test_set).unwrap();
    let short = ablate(&run.set, &encoded, &[8, 64], true).unwrap();
    let acc8 = short.points[0].macro_avg_accuracy;
    let acc64 = short.points[1].macro_avg_accuracy;

    let mut mean_rho = 0.0;
    for run in runs {
        let lengths: Vec<f64> = run.curve.points.iter().map(|p| p.length as f64).collect();
        let accs: Vec<f64> = run.curve.points.iter().map(|p| p.macro_avg_accuracy).collect();
        mean_rho += spearman(&lengths, &accs);
    }
    mean_rho /= runs.len() as f64;
    let ok = acc64 > acc8 && mean_rho >= 0.8;
    check(
        6,
        ok,
        format!("acc@64={acc64:.3} vs acc@8={acc8:.3}, mean Spearman {mean_rho:.3}"),
    );
}

#[test]
fn acceptance_07_metric_exactness() {
    let run = &runs()[0];
    let report = &run.report;

    // Macro average is exactly the mean of per-author accuracies.
    let with_texts: Vec<f64> = report
        .per_author
        .iter()
        .filter(|a| a.text_count > 0)
        .map(|a| a.accuracy)
        .collect();
    let mean = with_texts.iter().sum::<f64>() / with_texts.len() as f64;
    let macro_exact = report.macro_avg_accuracy == mean;

    // Confusion rows account for every scored test text.
    let rows_ok = report.per_author.iter().enumerate().all(|(i, a)| {
        report.confusion[i].iter().sum::<u64>() as usize == a.text_count - a.skipped
    });
    let none_skipped = report.total_skipped == 0;

    // Ablation at L >= max length reproduces plain evaluation bit-for-bit.
    let test_set: Vec<(String, Vec<u8>)> = run
        .dataset
        .test_texts()
        .map(|(a, t)| (a.clone(), t.to_vec()))
        .collect();
    let encoded = encode_test_set(&run.set, &test_set).unwrap();
    let max_len = encoded.iter().map(|(_, s)| s.len()).max().unwrap();
    let curve = ablate(&run.set, &encoded, &[max_len], false).unwrap();
    let full = evaluate_tokens(&run.set, &encoded, false).unwrap();
    let ablate_ok = curve.points[0].macro_avg_accuracy == full.macro_avg_accuracy
        && curve.points[0].skipped == full.total_skipped
        && full.macro_avg_accuracy == report.macro_avg_accuracy;

    check(
        7,
        macro_exact && rows_ok && none_skipped && ablate_ok,
        format!("macro_exact={macro_exact} rows_ok={rows_ok} none_skipped={none_skipped} ablate_ok={ablate_ok}"),
    );
}

#[test]
fn acceptance_08_self_predictability() {
    let run = &runs()[0];
    let mut failures = Vec::new();
    for (i, author) in run.set.authors.iter().enumerate() {
        let mut own = 0.0f64;
        let mut base = 0.0f64;
        let mut texts = 0usize;
        for (a, text) in run.dataset.train_texts() {
            if a != author {
                continue;
            }
            let ids = run.set.vocab.encode(text).ids;
            own += perplexity(&run.set.models[i], &ids).unwrap().value;
            base += perplexity(&run.set.base, &ids).unwrap().value;
            texts += 1;
        }
        own /= texts as f64;
        base /= texts as f64;
        if own > base {
            failures.push(format!("{author}: own {own:.3} > base {base:.3}"));
        }
    }
    check(8, failures.is_empty(), failures.join("; "));
}

#[test]
fn acceptance_09_determinism_and_persistence() {
    // Scale-free property, checked on a small config to keep the gate fast.
    let dataset = synth_corpus(3, 10, 31).unwrap();
    let cfg = ModelConfig {
        vocab_size: 300,
        context_len: 32,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
    };
    let tc = TrainingConfig {
        pretrain_epochs: 1,
        finetune_epochs: 3,
        batch_size: 4,
        lr_pretrain: 1e-3,
        lr_finetune: 1e-3,
        seed: 5,
    };
    let serial = build_alm_set(&dataset, cfg, &tc, None, false, false).unwrap();
    let parallel = build_alm_set(&dataset, cfg, &tc, None, true, false).unwrap();
    let again = build_alm_set(&dataset, cfg, &tc, None, true, false).unwrap();

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    serial.save(dir_a.path()).unwrap();
    parallel.save(dir_b.path()).unwrap();
    let mut bytes_identical = true;
    for entry in std::fs::read_dir(dir_a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dir_a.path().join(&name)).unwrap();
        let b = std::fs::read(dir_b.path().join(&name)).unwrap();
        if a != b {
            bytes_identical = false;
        }
    }

    let probe = dataset.records[0].text.as_bytes();
    let loaded = AlmSet::load(dir_b.path()).unwrap();
    let before = parallel.attribute("probe", probe).unwrap();
    let after = loaded.attribute("probe", probe).unwrap();

    let ok = serial == parallel && parallel == again && bytes_identical && before == after;
    check(
        9,
        ok,
        format!(
            "serial==parallel: {}, repeat: {}, files: {bytes_identical}, probe: {}",
            serial == parallel,
            parallel == again,
            before == after
        ),
    );
}

#[test]
fn acceptance_10_reference_dataset_stats() {
    // A 50-author newswire benchmark in the JSONL dataset format, placed
    // locally (not redistributed here). Expected shape: 50 authors with
    // 100 texts each, ~2.5M BPE tokens total, mean test text ~506 tokens.
    let path = std::env::var("ALMS_CCAT50")
        .unwrap_or_else(|_| concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ccat50.jsonl").into());
    let path = std::path::Path::new(&path);
    if !path.is_file() {
        println!("ACCEPTANCE 10 SKIP (reference dataset not present at {})", path.display());
        return;
    }
    let dataset = Dataset::load(path).unwrap();
    let texts: Vec<&str> = dataset.records.iter().map(|r| r.text.as_str()).collect();
    let vocab = Vocab::train(&texts, 512).unwrap();
    let stats = dataset_stats(&dataset, &vocab);
    let tokens_ok = (stats.token_count as f64 - 2.5e6).abs() / 2.5e6 <= 0.02;
    let ttl_ok = (stats.mean_test_text_len - 506.0).abs() / 506.0 <= 0.05;
    let ok = stats.author_count == 50 && stats.texts_per_author == 100.0 && tokens_ok && ttl_ok;
    check(
        10,
        ok,
        format!(
            "authors={} texts_per_author={} tokens={} mean_test_text_len={:.1}",
            stats.author_count, stats.texts_per_author, stats.token_count, stats.mean_test_text_len
        ),
    );
}
