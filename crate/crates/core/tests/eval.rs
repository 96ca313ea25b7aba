use alms::corpus::{synth_corpus, Dataset, Record, Split};
use alms::eval::{
    ablate, ablation_csv, confusion_csv, dataset_stats, encode_test_set, evaluate, report_csv,
    stats_csv, DEFAULT_ABLATION_GRID,
};
use alms::lm::{Model, ModelConfig};
use alms::tokenizer::Vocab;
use alms::training::{build_alm_set, AlmSet, TrainingConfig};
use alms::AlmError;

fn byte_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 256,
        context_len: 16,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
    }
}

/// All-zero weights except a readout that always favors byte `fav`:
/// LayerNorm gain 0 pins the final hidden state to its bias, so the
/// logits are input-independent and logit(fav) is the only nonzero one.
fn byte_fan_model(fav: u8) -> Model<f32> {
    let mut m = Model::<f32>::zeros(byte_config());
    m.ln_f.bias.data[0] = 1.0;
    m.tok_emb.row_mut(fav as usize)[0] = 5.0;
    m
}

/// Two authors whose models deterministically prefer the bytes 'a'/'b'.
fn rigged_set() -> AlmSet {
    let vocab = Vocab::train(&[b"ab".as_slice()], 256).unwrap();
    AlmSet {
        authors: vec!["alice".into(), "bob".into()],
        models: vec![byte_fan_model(b'a'), byte_fan_model(b'b')],
        base: byte_fan_model(0),
        vocab,
        model_config: byte_config(),
        training: TrainingConfig::default(),
        dataset_fingerprint: String::new(),
    }
}

fn q(author: &str, text: &str) -> (String, Vec<u8>) {
    (author.to_string(), text.as_bytes().to_vec())
}

#[test]
fn macro_average_is_the_mean_of_per_author_accuracies() {
    let set = rigged_set();
    // alice: 2/2 correct. bob: one 'b' text correct, one 'a' text wrong.
    let tests = vec![
        q("alice", "aaaa"),
        q("alice", "aaaaaa"),
        q("bob", "bbbb"),
        q("bob", "aaaa"),
    ];
    let report = evaluate(&set, &tests, false).unwrap();
    assert_eq!(report.per_author[0].accuracy, 1.0);
    assert_eq!(report.per_author[1].accuracy, 0.5);
    assert_eq!(report.macro_avg_accuracy, 0.75);
    assert_eq!(report.confusion, vec![vec![2, 0], vec![1, 1]]);
    assert_eq!(report.total_texts, 4);
    assert_eq!(report.total_skipped, 0);
}

#[test]
fn macro_average_ignores_text_volume_imbalance() {
    let set = rigged_set();
    // alice: 5 correct texts; bob: 1 wrong text. Micro accuracy would be
    // 5/6 but the macro average is (1.0 + 0.0)/2.
    let mut tests: Vec<_> = (0..5).map(|_| q("alice", "aaaa")).collect();
    tests.push(q("bob", "aaaa"));
    let report = evaluate(&set, &tests, false).unwrap();
    assert_eq!(report.macro_avg_accuracy, 0.5);
}

#[test]
fn sub_two_token_texts_are_skipped_and_count_as_misses() {
    let set = rigged_set();
    let tests = vec![q("alice", "aaaa"), q("alice", "a"), q("bob", "bbbb")];
    let report = evaluate(&set, &tests, false).unwrap();
    assert_eq!(report.per_author[0].text_count, 2);
    assert_eq!(report.per_author[0].skipped, 1);
    assert_eq!(report.per_author[0].accuracy, 0.5);
    assert_eq!(report.total_skipped, 1);
    // The skipped text never reaches the confusion matrix.
    assert_eq!(report.confusion[0].iter().sum::<u64>(), 1);
}

#[test]
fn confusion_rows_sum_to_scored_text_counts() {
    let d = synth_corpus(3, 8, 17).unwrap();
    let tc = TrainingConfig {
        pretrain_epochs: 1,
        finetune_epochs: 2,
        batch_size: 4,
        lr_pretrain: 1e-3,
        lr_finetune: 1e-3,
        seed: 0,
    };
    let cfg = ModelConfig {
        vocab_size: 300,
        context_len: 32,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
    };
    let set = build_alm_set(&d, cfg, &tc, None, true, false).unwrap();
    let tests: Vec<(String, Vec<u8>)> = d
        .test_texts()
        .map(|(a, t)| (a.clone(), t.to_vec()))
        .collect();
    let report = evaluate(&set, &tests, true).unwrap();
    for (i, a) in report.per_author.iter().enumerate() {
        let row_sum: u64 = report.confusion[i].iter().sum();
        assert_eq!(row_sum as usize, a.text_count - a.skipped, "author {i}");
    }
    assert_eq!(
        report.total_texts,
        report.per_author.iter().map(|a| a.text_count).sum::<usize>()
    );
    // Serial and parallel evaluation agree exactly.
    assert_eq!(report, evaluate(&set, &tests, false).unwrap());
}

#[test]
fn unknown_test_author_is_an_error() {
    let set = rigged_set();
    let err = evaluate(&set, &[q("mallory", "aaaa")], false).unwrap_err();
    assert!(matches!(err, AlmError::UnknownAuthor(a) if a == "mallory"));
}

#[test]
fn ablation_at_full_length_reproduces_plain_evaluation() {
    let set = rigged_set();
    let tests = vec![
        q("alice", "aaaaaaaa"),
        q("bob", "bbbbbbbb"),
        q("bob", "aaaa"),
    ];
    let full = evaluate(&set, &tests, false).unwrap();
    let encoded = encode_test_set(&set, &tests).unwrap();
    let curve = ablate(&set, &encoded, &[2, 4, 1000], false).unwrap();
    let last = curve.points.last().unwrap();
    assert_eq!(last.length, 1000);
    assert_eq!(last.macro_avg_accuracy, full.macro_avg_accuracy);
    assert_eq!(last.skipped, full.total_skipped);
}

#[test]
fn ablation_grid_is_sorted_deduped_and_validated() {
    let set = rigged_set();
    let encoded = encode_test_set(&set, &[q("alice", "aaaa")]).unwrap();
    let curve = ablate(&set, &encoded, &[10, 2, 10, 5], false).unwrap();
    let lengths: Vec<usize> = curve.points.iter().map(|p| p.length).collect();
    assert_eq!(lengths, vec![2, 5, 10]);
    assert!(ablate(&set, &encoded, &[], false).is_err());
    assert!(ablate(&set, &encoded, &[1, 5], false).is_err());
}

#[test]
fn default_grid_covers_the_reported_thresholds() {
    for needed in [20, 40, 70, 400] {
        assert!(DEFAULT_ABLATION_GRID.contains(&needed), "{needed} missing");
    }
    let mut sorted = DEFAULT_ABLATION_GRID.to_vec();
    sorted.sort_unstable();
    assert_eq!(sorted, DEFAULT_ABLATION_GRID);
    assert!(DEFAULT_ABLATION_GRID[0] >= 2);
}

#[test]
fn stats_count_tokens_with_the_given_vocab() {
    let d = Dataset::from_records(vec![
        Record {
            author: "a".into(),
            split: Split::Train,
            text: "abcd".into(),
        },
        Record {
            author: "b".into(),
            split: Split::Test,
            text: "ab".into(),
        },
    ]);
    let vocab = Vocab::train(&[b"xy".as_slice()], 256).unwrap(); // byte floor
    let s = dataset_stats(&d, &vocab);
    assert_eq!(s.author_count, 2);
    assert_eq!(s.text_count, 2);
    assert_eq!(s.token_count, 6);
    assert_eq!(s.texts_per_author, 1.0);
    assert_eq!(s.mean_test_text_len, 2.0);
}

#[test]
fn csv_outputs_are_well_formed() {
    let set = rigged_set();
    let tests = vec![q("alice", "aaaa"), q("bob", "aaaa")];
    let report = evaluate(&set, &tests, false).unwrap();

    let csv = report_csv(&report);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "author,text_count,token_count,mean_tokens_per_text,accuracy_pct");
    assert_eq!(lines.len(), 2 + set.authors.len());
    let macro_row = lines.last().unwrap();
    assert!(macro_row.starts_with("MACRO_AVG,,,,"));
    let pct: f64 = macro_row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((pct - report.macro_avg_accuracy * 100.0).abs() < 1e-12);

    let ccsv = confusion_csv(&set.authors, &report.confusion);
    assert_eq!(ccsv.lines().count(), 1 + set.authors.len());
    assert!(ccsv.starts_with("true\\pred,alice,bob"));

    let encoded = encode_test_set(&set, &tests).unwrap();
    let curve = ablate(&set, &encoded, &[2, 4], false).unwrap();
    let acsv = ablation_csv(&curve);
    assert_eq!(acsv.lines().next().unwrap(), "length,macro_avg_accuracy,skipped");
    assert_eq!(acsv.lines().count(), 3);

    let d = synth_corpus(2, 4, 0).unwrap();
    let scsv = stats_csv(&dataset_stats(&d, &set.vocab));
    assert_eq!(scsv.lines().count(), 2);
    assert!(scsv.starts_with("authors,texts,tokens,"));
}
