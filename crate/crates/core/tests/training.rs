use alms::corpus::{synth_corpus, Dataset, Record, Split};
use alms::lm::ModelConfig;
use alms::scoring::mean_nll;
use alms::tokenizer::{TokenSequence, Vocab};
use alms::training::{build_alm_set, finetune_author, pack_windows, pretrain_base, TrainingConfig};
use alms::AlmError;

fn small_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 300,
        context_len: 32,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
    }
}

fn fast_training(seed: u64) -> TrainingConfig {
    TrainingConfig {
        pretrain_epochs: 1,
        finetune_epochs: 2,
        batch_size: 4,
        lr_pretrain: 1e-3,
        lr_finetune: 1e-3,
        seed,
    }
}

fn seq(ids: &[u32]) -> TokenSequence {
    TokenSequence { ids: ids.to_vec() }
}

#[test]
fn pack_windows_concatenates_then_chunks() {
    let seqs = vec![seq(&[1, 2, 3]), seq(&[4, 5, 6, 7, 8])];
    let w = pack_windows(&seqs, 4);
    assert_eq!(w, vec![vec![1, 2, 3, 4], vec![5, 6, 7, 8]]);

    // A trailing partial window survives only with 2+ tokens.
    let w = pack_windows(&[seq(&[1, 2, 3, 4, 5])], 4);
    assert_eq!(w, vec![vec![1, 2, 3, 4]]);
    let w = pack_windows(&[seq(&[1, 2, 3, 4, 5, 6])], 4);
    assert_eq!(w, vec![vec![1, 2, 3, 4], vec![5, 6]]);
    assert!(pack_windows(&[seq(&[9])], 4).is_empty());
}

#[test]
fn zero_epochs_returns_the_initialization_and_base() {
    let cfg = small_config();
    let pooled = vec![seq(&[1, 2, 3, 4, 5, 6, 7, 8])];
    let mut tc = fast_training(3);
    tc.pretrain_epochs = 0;
    let base = pretrain_base(&pooled, cfg, &tc, false).unwrap();
    let init = alms::Model32::init(cfg, 3).unwrap();
    assert_eq!(base, init);

    tc.finetune_epochs = 0;
    let tuned = finetune_author(&base, "a", 0, &pooled, &tc, false).unwrap();
    assert_eq!(tuned, base);
}

#[test]
fn training_is_deterministic() {
    let d = synth_corpus(2, 6, 5).unwrap();
    let a = build_alm_set(&d, small_config(), &fast_training(9), None, false, false).unwrap();
    let b = build_alm_set(&d, small_config(), &fast_training(9), None, false, false).unwrap();
    assert_eq!(a, b);
    let c = build_alm_set(&d, small_config(), &fast_training(10), None, false, false).unwrap();
    assert_ne!(a.base, c.base);
}

#[test]
fn parallel_and_serial_fine_tuning_agree_bitwise() {
    let d = synth_corpus(3, 6, 11).unwrap();
    let serial = build_alm_set(&d, small_config(), &fast_training(1), None, false, false).unwrap();
    let parallel = build_alm_set(&d, small_config(), &fast_training(1), None, true, false).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn author_models_are_independent_of_roster_changes() {
    // Adding a third author must not change the first author's fine-tune,
    // given the same base and vocab.
    let d = synth_corpus(3, 6, 2).unwrap();
    let vocab = {
        let texts: Vec<&[u8]> = d.train_texts().map(|(_, t)| t).collect();
        Vocab::train(&texts, small_config().vocab_size).unwrap()
    };
    let tc = fast_training(4);
    let corpus_a: Vec<TokenSequence> = d
        .train_texts()
        .filter(|(a, _)| *a == "author_0")
        .map(|(_, t)| vocab.encode(t))
        .collect();
    let pooled: Vec<TokenSequence> = d.train_texts().map(|(_, t)| vocab.encode(t)).collect();
    let base = pretrain_base(&pooled, small_config(), &tc, false).unwrap();
    let once = finetune_author(&base, "author_0", 0, &corpus_a, &tc, false).unwrap();
    let again = finetune_author(&base, "author_0", 0, &corpus_a, &tc, false).unwrap();
    assert_eq!(once, again);
}

#[test]
fn fine_tuning_specializes_toward_the_author() {
    // After fine-tuning, each author's model should beat the shared base
    // on that author's own training text.
    let d = synth_corpus(2, 8, 21).unwrap();
    let mut tc = fast_training(0);
    tc.finetune_epochs = 6;
    let set = build_alm_set(&d, small_config(), &tc, None, true, false).unwrap();
    for (i, author) in set.authors.iter().enumerate() {
        let text = d
            .records
            .iter()
            .find(|r| r.author == *author && r.split == Split::Train)
            .unwrap();
        let ids = set.vocab.encode(text.text.as_bytes()).ids;
        let (own, _) = mean_nll(&set.models[i], &ids).unwrap();
        let (base, _) = mean_nll(&set.base, &ids).unwrap();
        assert!(own < base, "{author}: fine-tuned {own:.4} vs base {base:.4}");
    }
}

#[test]
fn empty_author_corpus_is_untrainable() {
    let d = Dataset::from_records(vec![
        Record {
            author: "a".into(),
            split: Split::Train,
            text: "plenty of training text for author a".into(),
        },
        Record {
            author: "b".into(),
            split: Split::Train,
            text: "".into(),
        },
    ]);
    let err = build_alm_set(&d, small_config(), &fast_training(0), None, false, false).unwrap_err();
    assert!(matches!(err, AlmError::AuthorUntrainable(a) if a == "b"));
}

#[test]
fn single_author_rosters_are_rejected() {
    let d = Dataset::from_records(vec![Record {
        author: "only".into(),
        split: Split::Train,
        text: "text".into(),
    }]);
    assert!(matches!(
        build_alm_set(&d, small_config(), &fast_training(0), None, false, false),
        Err(AlmError::TooFewAuthors(1))
    ));
}

#[test]
fn invalid_training_config_is_rejected() {
    let mut tc = fast_training(0);
    tc.batch_size = 0;
    assert!(tc.validate().is_err());
    let mut tc = fast_training(0);
    tc.lr_finetune = -1.0;
    assert!(tc.validate().is_err());
    assert!(TrainingConfig::default().validate().is_ok());
}

#[test]
fn set_fingerprint_matches_dataset() {
    let d = synth_corpus(2, 4, 8).unwrap();
    let set = build_alm_set(&d, small_config(), &fast_training(0), None, false, false).unwrap();
    assert_eq!(set.dataset_fingerprint, d.fingerprint());
    assert_eq!(set.authors, d.authors);
    assert_eq!(set.models.len(), 2);
}
