//! Command-line surface: preprocess, train, evaluate, predict, and matrix
//! subcommands over one config layer. Flags override config-file values and
//! the effective config is echoed before any compute.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_corpus, read_conversations, read_split_spec, Conversation, IngestOptions, OutRecord,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, render_report, run_matrix, EvalReport, MatrixResult, MatrixSpec};
use crate::model::HeadKind;
use crate::trainer::{fit, write_log, Checkpoint, OptKind, TrainConfig};

/// Environment variable naming the directory that relative data paths are
/// resolved against. It affects nothing else.
pub const DATA_ROOT_VAR: &str = "DIALACT_DATA_ROOT";

/// Config-file schema: every key optional, unknown keys rejected. Flags
/// override file values; anything still unset falls back to `TrainConfig`
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub lowercase: Option<bool>,
    pub strip_punctuation: Option<bool>,
    pub context: Option<usize>,
    pub rate: Option<f64>,
    pub optimizer: Option<OptKind>,
    pub batch: Option<usize>,
    pub dropout: Option<f64>,
    pub widths: Option<Vec<usize>>,
    pub filters_per_width: Option<usize>,
    pub dim: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub max_len: Option<usize>,
    pub min_freq: Option<usize>,
    pub head: Option<HeadKind>,
    pub average: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            field: "--config".into(),
            message: format!("{}: {e}", path.display()),
        })
    }

    /// Resolve against `TrainConfig` defaults.
    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            context: self.context.unwrap_or(d.context),
            rate: self.rate.unwrap_or(d.rate),
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            batch: self.batch.unwrap_or(d.batch),
            dropout: self.dropout.unwrap_or(d.dropout),
            widths: self.widths.clone().unwrap_or(d.widths),
            filters_per_width: self.filters_per_width.unwrap_or(d.filters_per_width),
            dim: self.dim.unwrap_or(d.dim),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            seeds: self.seeds.clone().unwrap_or(d.seeds),
            max_len: self.max_len.unwrap_or(d.max_len),
            min_freq: self.min_freq.unwrap_or(d.min_freq),
            head: self.head.unwrap_or(d.head),
            average: self.average.unwrap_or(d.average),
        }
    }

    pub fn ingest_options(&self) -> IngestOptions {
        let d = IngestOptions::default();
        IngestOptions {
            lowercase: self.lowercase.unwrap_or(d.lowercase),
            strip_punctuation: self.strip_punctuation.unwrap_or(d.strip_punctuation),
        }
    }

    /// Fill every field so the echoed config re-parses to the identical run.
    pub fn resolved(&self) -> RunConfig {
        let t = self.train_config();
        let i = self.ingest_options();
        RunConfig {
            corpus: self.corpus.clone(),
            splits: self.splits.clone(),
            embeddings: self.embeddings.clone(),
            out: self.out.clone(),
            lowercase: Some(i.lowercase),
            strip_punctuation: Some(i.strip_punctuation),
            context: Some(t.context),
            rate: Some(t.rate),
            optimizer: Some(t.optimizer),
            batch: Some(t.batch),
            dropout: Some(t.dropout),
            widths: Some(t.widths),
            filters_per_width: Some(t.filters_per_width),
            dim: Some(t.dim),
            max_epochs: Some(t.max_epochs),
            patience: Some(t.patience),
            seeds: Some(t.seeds),
            max_len: Some(t.max_len),
            min_freq: Some(t.min_freq),
            head: Some(t.head),
            average: Some(t.average),
        }
    }
}

/// Resolve a possibly relative data path against an optional root.
pub fn resolve_path(root: Option<&Path>, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match root {
        Some(r) => r.join(path),
        None => path.to_path_buf(),
    }
}

fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_VAR).map(PathBuf::from)
}

fn resolve_data(path: &Path) -> PathBuf {
    resolve_path(data_root().as_deref(), path)
}

fn missing(field: &str) -> Error {
    Error::Config {
        field: field.into(),
        message: "required but not set by flag or config file".into(),
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "dialact",
    version,
    about = "Dialog-act sequence labeling: CNN utterance encoder with a linear-chain CRF"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rewrite a corpus file with tokenization flags applied.
    Preprocess(PreprocessArgs),
    /// Fit one model per seed and write checkpoints plus a training log.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled corpus.
    Evaluate(EvaluateArgs),
    /// Fill in predicted labels for a possibly unlabeled corpus.
    Predict(PredictArgs),
    /// Run a train-variant x test-variant accuracy grid.
    Matrix(MatrixArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Input corpus records file.
    #[arg(long)]
    input: PathBuf,
    /// Output corpus records file.
    #[arg(long)]
    out: PathBuf,
    /// Remove punctuation tokens and punctuation stuck to token edges.
    #[arg(long)]
    strip_punct: bool,
    /// Keep original casing instead of lowercasing.
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Config file (JSON, RunConfig schema).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus records file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Split assignment file.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Pretrained embeddings in text format.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed list; one independent run each.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Context size n (n preceding utterances plus the current one).
    #[arg(long)]
    context: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled corpus records file.
    #[arg(long)]
    corpus: PathBuf,
    /// Split assignment file; required with --split.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Evaluate only conversations assigned to this split.
    #[arg(long)]
    split: Option<String>,
    /// Directory for the machine-readable report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strip_punct: bool,
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus records file; labels optional and ignored.
    #[arg(long)]
    input: PathBuf,
    /// Output records file with predicted labels filled in.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    strip_punct: bool,
    #[arg(long)]
    no_lowercase: bool,
}

#[derive(Args, Debug)]
struct MatrixArgs {
    /// Matrix spec file (JSON, MatrixSpec schema).
    #[arg(long)]
    spec: PathBuf,
    /// Directory for per-cell machine records.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn echo_config<T: Serialize>(value: &T) {
    println!(
        "effective-config: {}",
        serde_json::to_string(value).expect("config serializes")
    );
}

pub struct PreprocessSummary {
    pub utterances: usize,
    pub emptied: usize,
    pub vocab_before: usize,
    pub vocab_after: usize,
}

/// Apply tokenization flags and write the corpus back out.
pub fn cmd_preprocess(
    input: &Path,
    out: &Path,
    opts: IngestOptions,
) -> Result<PreprocessSummary> {
    let raw = read_conversations(
        input,
        IngestOptions {
            lowercase: false,
            strip_punctuation: false,
        },
    )?;
    let cooked = read_conversations(input, opts)?;
    let mut utterances = 0usize;
    let mut emptied = 0usize;
    let mut vocab_before: BTreeSet<String> = BTreeSet::new();
    let mut vocab_after: BTreeSet<String> = BTreeSet::new();
    let mut buf = Vec::new();
    for (rc, cc) in raw.iter().zip(&cooked) {
        for (ru, cu) in rc.utterances.iter().zip(&cc.utterances) {
            utterances += 1;
            if !ru.tokens.is_empty() && cu.tokens.is_empty() {
                emptied += 1;
            }
            vocab_before.extend(ru.tokens.iter().cloned());
            vocab_after.extend(cu.tokens.iter().cloned());
            let record = OutRecord {
                conversation_id: &cc.id,
                speaker: &cu.speaker,
                text: cu.tokens.join(" "),
                label: cu.label.as_deref(),
            };
            serde_json::to_writer(&mut buf, &record).expect("record serializes");
            buf.push(b'\n');
        }
    }
    std::fs::write(out, buf).map_err(|e| Error::io(out, e))?;
    Ok(PreprocessSummary {
        utterances,
        emptied,
        vocab_before: vocab_before.len(),
        vocab_after: vocab_after.len(),
    })
}

fn run_preprocess(args: PreprocessArgs) -> Result<()> {
    let opts = IngestOptions {
        lowercase: !args.no_lowercase,
        strip_punctuation: args.strip_punct,
    };
    let input = resolve_data(&args.input);
    echo_config(&serde_json::json!({
        "input": input,
        "out": args.out,
        "lowercase": opts.lowercase,
        "strip_punctuation": opts.strip_punctuation,
    }));
    let summary = cmd_preprocess(&input, &args.out, opts)?;
    println!(
        "utterances {}, emptied {}, distinct tokens {} -> {}",
        summary.utterances, summary.emptied, summary.vocab_before, summary.vocab_after
    );
    Ok(())
}

/// Run fit and write one checkpoint per seed plus the combined log.
pub fn cmd_train(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = config.corpus.as_ref().ok_or_else(|| missing("corpus"))?;
    let splits = config.splits.as_ref().ok_or_else(|| missing("splits"))?;
    let out = config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    let train_config = config.train_config();
    train_config.validate()?;
    let split = load_corpus(
        &resolve_data(corpus),
        &resolve_data(splits),
        config.ingest_options(),
    )?;
    let (n_train, n_valid, n_test) = split.utterance_counts();
    println!(
        "corpus: {} labels, {n_train}/{n_valid}/{n_test} train/valid/test utterances",
        split.labels.len()
    );
    let embeddings = config.embeddings.as_ref().map(|p| resolve_data(p));
    let result = fit(&split, &train_config, embeddings.as_deref())?;
    if let Some(cov) = &result.runs[0].coverage {
        println!(
            "embedding coverage {} ({:.1}%)",
            cov,
            cov.fraction() * 100.0
        );
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();
    for run in &result.runs {
        let path = out.join(format!("seed-{}.ckpt", run.seed));
        run.checkpoint.save(&path)?;
        println!(
            "seed {}: best epoch {}, valid accuracy {:.4} -> {}",
            run.seed,
            run.best_epoch,
            run.best_accuracy,
            path.display()
        );
        written.push(path);
    }
    let log_path = out.join("train-log.jsonl");
    write_log(&log_path, &result.log)?;
    written.push(log_path);
    println!("valid accuracy {}", result.summary.render());
    Ok(written)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.corpus.is_some() {
        config.corpus = args.corpus;
    }
    if args.splits.is_some() {
        config.splits = args.splits;
    }
    if args.embeddings.is_some() {
        config.embeddings = args.embeddings;
    }
    if args.out.is_some() {
        config.out = args.out;
    }
    if args.seed.is_some() {
        config.seeds = args.seed;
    }
    if args.context.is_some() {
        config.context = args.context;
    }
    let resolved = config.resolved();
    echo_config(&resolved);
    cmd_train(&resolved)?;
    Ok(())
}

/// Optionally restrict a labeled corpus to one named split.
fn filter_split(
    conversations: Vec<Conversation>,
    splits: Option<&Path>,
    split: Option<&str>,
) -> Result<Vec<Conversation>> {
    let Some(name) = split else {
        return Ok(conversations);
    };
    let Some(path) = splits else {
        return Err(Error::Config {
            field: "--split".into(),
            message: "requires --splits".into(),
        });
    };
    let spec = read_split_spec(path)?;
    Ok(conversations
        .into_iter()
        .filter(|c| spec.get(&c.id).map(String::as_str) == Some(name))
        .collect())
}

/// Evaluate a checkpoint on a corpus file; returns the report for printing
/// and optional machine output.
pub fn cmd_evaluate(
    checkpoint: &Path,
    corpus: &Path,
    splits: Option<&Path>,
    split: Option<&str>,
    opts: IngestOptions,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let conversations = read_conversations(corpus, opts)?;
    let conversations = filter_split(conversations, splits, split)?;
    evaluate(&ckpt, &conversations)
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let opts = IngestOptions {
        lowercase: !args.no_lowercase,
        strip_punctuation: args.strip_punct,
    };
    let checkpoint = resolve_data(&args.checkpoint);
    let corpus = resolve_data(&args.corpus);
    let splits = args.splits.as_ref().map(|p| resolve_data(p));
    echo_config(&serde_json::json!({
        "checkpoint": checkpoint,
        "corpus": corpus,
        "splits": splits,
        "split": args.split,
        "lowercase": opts.lowercase,
        "strip_punctuation": opts.strip_punctuation,
    }));
    let report = cmd_evaluate(
        &checkpoint,
        &corpus,
        splits.as_deref(),
        args.split.as_deref(),
        opts,
    )?;
    print!("{}", render_report(&report));
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("report.json");
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

/// Predict labels for every utterance and write the records back out with
/// predictions filled in, order preserved.
pub fn cmd_predict(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    opts: IngestOptions,
) -> Result<usize> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = &ckpt.model;
    let conversations = read_conversations(input, opts)?;
    let mut buf = Vec::new();
    let mut count = 0usize;
    for conv in &conversations {
        let windows = crate::corpus::make_windows(
            conv,
            model.shape.context,
            &model.vocab,
            model.shape.max_len,
            None,
        );
        for (utt, w) in conv.utterances.iter().zip(&windows) {
            let label = model.predict_name(w)?;
            let record = OutRecord {
                conversation_id: &conv.id,
                speaker: &utt.speaker,
                text: utt.raw_text.clone(),
                label: Some(label),
            };
            serde_json::to_writer(&mut buf, &record).expect("record serializes");
            buf.push(b'\n');
            count += 1;
        }
    }
    std::fs::write(out, buf).map_err(|e| Error::io(out, e))?;
    Ok(count)
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let opts = IngestOptions {
        lowercase: !args.no_lowercase,
        strip_punctuation: args.strip_punct,
    };
    let checkpoint = resolve_data(&args.checkpoint);
    let input = resolve_data(&args.input);
    echo_config(&serde_json::json!({
        "checkpoint": checkpoint,
        "input": input,
        "out": args.out,
        "lowercase": opts.lowercase,
        "strip_punctuation": opts.strip_punctuation,
    }));
    let count = cmd_predict(&checkpoint, &input, &args.out, opts)?;
    println!("predicted {count} utterances -> {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct CellRecord<'a> {
    train: &'a str,
    test: &'a str,
    accuracy: f64,
    avg: f64,
    min: f64,
    max: f64,
    n_utterances: usize,
}

fn matrix_records(result: &MatrixResult) -> String {
    let mut out = String::new();
    for (i, train) in result.train_names.iter().enumerate() {
        for (j, test) in result.test_names.iter().enumerate() {
            let cell = &result.cells[i][j];
            let record = CellRecord {
                train,
                test,
                accuracy: cell.accuracy,
                avg: cell.summary.avg,
                min: cell.summary.min,
                max: cell.summary.max,
                n_utterances: cell.n_utterances,
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

fn run_matrix_cmd(args: MatrixArgs) -> Result<()> {
    let text =
        std::fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let mut spec: MatrixSpec = serde_json::from_str(&text).map_err(|e| Error::Config {
        field: "--spec".into(),
        message: format!("{}: {e}", args.spec.display()),
    })?;
    spec.splits = resolve_data(&spec.splits);
    for v in spec.train.iter_mut().chain(spec.test.iter_mut()) {
        v.path = resolve_data(&v.path);
    }
    if let Some(e) = &spec.embeddings {
        spec.embeddings = Some(resolve_data(e));
    }
    echo_config(&spec);
    let result = run_matrix(&spec)?;
    print!("{}", result.render());
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("matrix.jsonl");
        std::fs::write(&path, matrix_records(&result)).map_err(|e| Error::io(&path, e))?;
        println!("records written to {}", path.display());
    }
    Ok(())
}

/// Parse argv and dispatch. Usage errors exit 1, --help and --version exit 0.
pub fn run() -> Result<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match cli.command {
        Command::Preprocess(args) => run_preprocess(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Predict(args) => run_predict(args),
        Command::Matrix(args) => run_matrix_cmd(args),
    }
}
