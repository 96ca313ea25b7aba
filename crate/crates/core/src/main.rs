//! Batch CLI: train, attribute, eval, ablate, stats, synth, import.
//! stdout carries only data; diagnostics go to stderr. Exit codes:
//! 0 success, 1 runtime failure, 2 usage error.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use alms::corpus::{synth_corpus, Dataset, Record, Split};
use alms::eval::{
    ablate, ablation_csv, confusion_csv, dataset_stats, encode_test_set, evaluate_tokens,
    report_csv, stats_csv, DEFAULT_ABLATION_GRID,
};
use alms::lm::ModelConfig;
use alms::tokenizer::Vocab;
use alms::training::{build_alm_set, AlmSet, TrainingConfig};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (model format 1, vocab format 1, manifest format 1)"
);

#[derive(Parser)]
#[command(name = "alms", version, long_version = LONG_VERSION)]
#[command(about = "Authorship attribution via per-author causal language model perplexity")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a shared vocab, a pooled base model, and one model per author
    Train(TrainArgs),
    /// Attribute a questioned document against a trained model set
    Attribute(AttributeArgs),
    /// Evaluate attribution accuracy on a dataset's test split
    Eval(EvalArgs),
    /// Text-ablation curve: accuracy vs truncated test text length
    Ablate(AblateArgs),
    /// Dataset statistics (authors, texts, tokens, test text length)
    Stats(StatsArgs),
    /// Generate a seeded synthetic multi-author dataset
    Synth(SynthArgs),
    /// Convert a text,label CSV into the JSONL dataset format
    Import(ImportArgs),
}

/// Optional overrides loaded from --config JSON; explicit flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    vocab_size: Option<usize>,
    context_len: Option<usize>,
    d_model: Option<usize>,
    n_layers: Option<usize>,
    n_heads: Option<usize>,
    d_ff: Option<usize>,
    epochs: Option<usize>,
    pretrain_epochs: Option<usize>,
    batch_size: Option<usize>,
    lr_pretrain: Option<f64>,
    lr_finetune: Option<f64>,
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    context_len: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    /// Fine-tune epochs per author
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_pretrain: Option<f64>,
    #[arg(long)]
    lr_finetune: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-author training; 1 forces serial
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Suppress per-epoch progress lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct AttributeArgs {
    #[arg(long)]
    models: PathBuf,
    /// File containing the questioned document
    #[arg(long, conflicts_with = "stdin")]
    text: Option<PathBuf>,
    /// Read the questioned document from stdin
    #[arg(long)]
    stdin: bool,
    #[arg(long, default_value = "query")]
    query_id: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    confusion: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated token lengths
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Existing vocab file; trained on the dataset when absent
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    vocab_size: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    authors: usize,
    #[arg(long)]
    texts_per_author: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    /// CSV with header text,label
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split assigned to the imported records
    #[arg(long, default_value = "train")]
    split: String,
    /// Append to an existing JSONL dataset instead of overwriting
    #[arg(long)]
    append: bool,
}

/// Echoed into every mutating command's output directory.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    model_config: ModelConfig,
    training: TrainingConfig,
    dataset_fingerprint: String,
    seed: u64,
    duration_secs: f64,
    artifacts: Vec<PathBuf>,
}

fn init_jobs(jobs: usize) -> bool {
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    jobs != 1
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Attribute(args) => cmd_attribute(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Ablate(args) => cmd_ablate(args),
        Cmd::Stats(args) => cmd_stats(args),
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Import(args) => cmd_import(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_file_config(path: &Option<PathBuf>) -> anyhow::Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn warn_untrainable(dataset: &Dataset) {
    for author in dataset.authors_without_training() {
        eprintln!("warning: author `{author}` has no training records");
    }
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let parallel = init_jobs(args.jobs);
    let file = load_file_config(&args.config)?;
    let defaults = ModelConfig::desk_default();
    let model_config = ModelConfig {
        vocab_size: args.vocab_size.or(file.vocab_size).unwrap_or(defaults.vocab_size),
        context_len: args.context_len.or(file.context_len).unwrap_or(defaults.context_len),
        d_model: args.d_model.or(file.d_model).unwrap_or(defaults.d_model),
        n_layers: args.n_layers.or(file.n_layers).unwrap_or(defaults.n_layers),
        n_heads: args.n_heads.or(file.n_heads).unwrap_or(defaults.n_heads),
        d_ff: args.d_ff.or(file.d_ff).unwrap_or(defaults.d_ff),
    };
    let td = TrainingConfig::default();
    let training = TrainingConfig {
        pretrain_epochs: args.pretrain_epochs.or(file.pretrain_epochs).unwrap_or(td.pretrain_epochs),
        finetune_epochs: args.epochs.or(file.epochs).unwrap_or(td.finetune_epochs),
        batch_size: args.batch_size.or(file.batch_size).unwrap_or(td.batch_size),
        lr_pretrain: args.lr_pretrain.or(file.lr_pretrain).unwrap_or(td.lr_pretrain),
        lr_finetune: args.lr_finetune.or(file.lr_finetune).unwrap_or(td.lr_finetune),
        seed: args.seed.or(file.seed).unwrap_or(td.seed),
    };

    let dataset = Dataset::load(&args.dataset)?;
    warn_untrainable(&dataset);
    let alms = build_alm_set(&dataset, model_config, &training, None, parallel, !args.quiet)?;
    let mut artifacts = alms.save(&args.out)?;
    let manifest = RunManifest {
        command: "train".into(),
        model_config,
        training,
        dataset_fingerprint: alms.dataset_fingerprint.clone(),
        seed: training.seed,
        duration_secs: started.elapsed().as_secs_f64(),
        artifacts: artifacts.clone(),
    };
    let manifest_path = args.out.join("run_manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    artifacts.push(manifest_path);
    eprintln!(
        "trained {} authorial models in {:.1}s -> {}",
        alms.authors.len(),
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

fn cmd_attribute(args: AttributeArgs) -> anyhow::Result<()> {
    let alms = AlmSet::load(&args.models)?;
    let text = match (&args.text, args.stdin) {
        (Some(path), false) => std::fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        (None, true) => {
            let mut buf = Vec::new();
            std::io::stdin().read_to_end(&mut buf)?;
            buf
        }
        _ => bail!("provide exactly one of --text or --stdin"),
    };
    let result = alms.attribute(&args.query_id, &text)?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn load_test_set(path: &Path) -> anyhow::Result<(Dataset, Vec<(String, Vec<u8>)>)> {
    let dataset = Dataset::load(path)?;
    let test_set: Vec<(String, Vec<u8>)> = dataset
        .test_texts()
        .map(|(a, t)| (a.clone(), t.to_vec()))
        .collect();
    if test_set.is_empty() {
        bail!("{}: dataset has no test records", path.display());
    }
    Ok((dataset, test_set))
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let parallel = init_jobs(args.jobs);
    let alms = AlmSet::load(&args.models)?;
    let (_, test_set) = load_test_set(&args.dataset)?;
    let encoded = encode_test_set(&alms, &test_set)?;
    let report = evaluate_tokens(&alms, &encoded, parallel)?;
    std::fs::write(&args.report, report_csv(&report))
        .with_context(|| format!("writing {}", args.report.display()))?;
    if let Some(confusion) = &args.confusion {
        std::fs::write(confusion, confusion_csv(&alms.authors, &report.confusion))
            .with_context(|| format!("writing {}", confusion.display()))?;
    }
    eprintln!(
        "macro-average accuracy {:.4} over {} test texts ({} skipped)",
        report.macro_avg_accuracy, report.total_texts, report.total_skipped
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<()> {
    let parallel = init_jobs(args.jobs);
    let alms = AlmSet::load(&args.models)?;
    let (_, test_set) = load_test_set(&args.dataset)?;
    let encoded = encode_test_set(&alms, &test_set)?;
    let grid: Vec<usize> = if args.grid.is_empty() {
        DEFAULT_ABLATION_GRID.to_vec()
    } else {
        args.grid.clone()
    };
    let curve = ablate(&alms, &encoded, &grid, parallel)?;
    std::fs::write(&args.out, ablation_csv(&curve))
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("ablation curve over {} lengths -> {}", curve.points.len(), args.out.display());
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> anyhow::Result<()> {
    let dataset = Dataset::load(&args.dataset)?;
    let vocab = match &args.vocab {
        Some(path) => Vocab::load(path)?,
        None => {
            let texts: Vec<&str> = dataset.records.iter().map(|r| r.text.as_str()).collect();
            Vocab::train(&texts, args.vocab_size)?
        }
    };
    print!("{}", stats_csv(&dataset_stats(&dataset, &vocab)));
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let dataset = synth_corpus(args.authors, args.texts_per_author, args.seed)?;
    dataset.save(&args.out)?;
    let manifest = serde_json::json!({
        "command": "synth",
        "authors": args.authors,
        "texts_per_author": args.texts_per_author,
        "seed": args.seed,
        "dataset_fingerprint": dataset.fingerprint(),
        "duration_secs": started.elapsed().as_secs_f64(),
        "artifacts": [args.out],
    });
    let manifest_path = args.out.with_extension("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn cmd_import(args: ImportArgs) -> anyhow::Result<()> {
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => bail!("unknown split `{other}` (expected train or test)"),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&args.csv)
        .with_context(|| format!("opening {}", args.csv.display()))?;
    let headers = reader.headers()?.clone();
    let text_col = headers
        .iter()
        .position(|h| h == "text")
        .context("csv has no `text` column")?;
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .context("csv has no `label` column")?;
    let mut records = Vec::new();
    if args.append && args.out.exists() {
        records = Dataset::load(&args.out)?.records;
    }
    for row in reader.records() {
        let row = row?;
        records.push(Record {
            author: row.get(label_col).context("short csv row")?.to_string(),
            split,
            text: row.get(text_col).context("short csv row")?.to_string(),
        });
    }
    let dataset = Dataset::from_records(records);
    dataset.save(&args.out)?;
    eprintln!(
        "imported {} records -> {} ({} authors)",
        dataset.records.len(),
        args.out.display(),
        dataset.authors.len()
    );
    Ok(())
}
