//! Mini-batch training: SGD and AdaGrad, seeded shuffling, validation-based
//! model selection with patience, optional parameter averaging, multi-seed
//! runs, and the versioned binary checkpoint format.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocab, make_windows, ContextWindow, CorpusSplit, LabelSet, Vocabulary,
};
use crate::crf::{ScoreProjection, TransitionParams};
use crate::embedding::{load_pretrained, Coverage, EmbeddingTable};
use crate::encoder::{ConvFilterBank, Mode, WidthGroup};
use crate::error::{Error, Result};
use crate::math::Mat;
use crate::model::{Gradients, Head, HeadKind, Model, ModelShape};

pub const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptKind {
    Sgd,
    Adagrad,
}

/// All training hyperparameters. Defaults follow the meeting-corpus setup:
/// SGD at rate 0.01, batch 70, dropout 0.5, widths 3/4/5 with 100 filters
/// each over 300-dim embeddings, five seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub context: usize,
    pub rate: f64,
    pub optimizer: OptKind,
    pub batch: usize,
    pub dropout: f64,
    pub widths: Vec<usize>,
    pub filters_per_width: usize,
    pub dim: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub max_len: usize,
    pub min_freq: usize,
    pub head: HeadKind,
    /// Polyak-style running parameter average for evaluation; off by default.
    pub average: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            context: 2,
            rate: 0.01,
            optimizer: OptKind::Sgd,
            batch: 70,
            dropout: 0.5,
            widths: vec![3, 4, 5],
            filters_per_width: 100,
            dim: 300,
            max_epochs: 100,
            patience: 10,
            seeds: vec![1, 2, 3, 4, 5],
            max_len: 100,
            min_freq: 1,
            head: HeadKind::Crf,
            average: false,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            context: self.context,
            max_len: self.max_len,
            dropout: self.dropout,
            widths: self.widths.clone(),
            filters_per_width: self.filters_per_width,
            dim: self.dim,
            head: self.head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) {
            return Err(Error::Config {
                field: "rate".into(),
                message: "learning rate must be positive".into(),
            });
        }
        if self.batch < 1 {
            return Err(Error::Config {
                field: "batch".into(),
                message: "mini-batch size must be at least 1".into(),
            });
        }
        if self.max_epochs < 1 {
            return Err(Error::Config {
                field: "max_epochs".into(),
                message: "need at least one epoch".into(),
            });
        }
        if self.seeds.is_empty() {
            return Err(Error::Config {
                field: "seeds".into(),
                message: "need at least one seed".into(),
            });
        }
        if self.min_freq < 1 {
            return Err(Error::Config {
                field: "min_freq".into(),
                message: "must be at least 1".into(),
            });
        }
        self.shape().validate()
    }
}

/// theta <- theta - rate * g.
pub fn sgd_step(group: &str, params: &mut [f64], grads: &[f64], rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            context: "optimizer step",
            expected: params.len(),
            found: grads.len(),
        });
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient for {group}"),
        });
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= rate * g;
    }
    Ok(())
}

/// G <- G + g^2; theta <- theta - rate * g / (sqrt(G) + eps).
pub fn adagrad_step(
    group: &str,
    params: &mut [f64],
    grads: &[f64],
    accum: &mut [f64],
    rate: f64,
) -> Result<()> {
    if params.len() != grads.len() || accum.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            context: "adagrad step",
            expected: params.len(),
            found: grads.len().min(accum.len()),
        });
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("gradient for {group}"),
        });
    }
    for ((p, g), a) in params.iter_mut().zip(grads).zip(accum) {
        *a += g * g;
        *p -= rate * g / (a.sqrt() + ADAGRAD_EPS);
    }
    Ok(())
}

/// Optimizer state: AdaGrad keeps one squared-gradient accumulator per named
/// parameter group; SGD keeps nothing beyond the rate.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptKind,
    pub rate: f64,
    accum: HashMap<String, Vec<f64>>,
    /// Optimizer steps taken, counted once per mini-batch.
    pub batches: usize,
}

impl Optimizer {
    pub fn new(kind: OptKind, rate: f64) -> Self {
        Optimizer {
            kind,
            rate,
            accum: HashMap::new(),
            batches: 0,
        }
    }

    pub fn step(&mut self, group: &str, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self.kind {
            OptKind::Sgd => sgd_step(group, params, grads, self.rate),
            OptKind::Adagrad => {
                let acc = self
                    .accum
                    .entry(group.to_string())
                    .or_insert_with(|| vec![0.0; params.len()]);
                if acc.len() != params.len() {
                    return Err(Error::ShapeMismatch {
                        context: "adagrad accumulator",
                        expected: params.len(),
                        found: acc.len(),
                    });
                }
                adagrad_step(group, params, grads, acc, self.rate)
            }
        }
    }

    /// Sparse embedding update; AdaGrad state covers the whole table so a
    /// row's accumulator persists across batches that touch it.
    pub fn step_embedding(
        &mut self,
        table: &mut EmbeddingTable,
        entries: &BTreeMap<usize, Vec<f64>>,
    ) -> Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        let d = table.dim();
        let list: Vec<(usize, Vec<f64>)> =
            entries.iter().map(|(id, g)| (*id, g.clone())).collect();
        let rate = self.rate;
        match self.kind {
            OptKind::Sgd => table.apply_sparse_grad(&list, |id, row, grad| {
                sgd_step(&format!("embedding row {id}"), row, grad, rate)
            }),
            OptKind::Adagrad => {
                let total = table.vocab_size() * d;
                let acc = self
                    .accum
                    .entry("embedding".to_string())
                    .or_insert_with(|| vec![0.0; total]);
                if acc.len() != total {
                    return Err(Error::ShapeMismatch {
                        context: "embedding accumulator",
                        expected: total,
                        found: acc.len(),
                    });
                }
                table.apply_sparse_grad(&list, |id, row, grad| {
                    adagrad_step(
                        &format!("embedding row {id}"),
                        row,
                        grad,
                        &mut acc[id * d..(id + 1) * d],
                        rate,
                    )
                })
            }
        }
    }
}

/// One optimizer step over every parameter group.
pub fn apply_gradients(model: &mut Model, grads: &Gradients, opt: &mut Optimizer) -> Result<()> {
    for (gi, group) in model.bank.groups.iter_mut().enumerate() {
        for (fi, w) in group.weights.iter_mut().enumerate() {
            opt.step(
                &format!("conv{gi}.f{fi}"),
                w.as_mut_slice(),
                grads.bank.groups[gi].weights[fi].as_slice(),
            )?;
        }
        opt.step(
            &format!("conv{gi}.bias"),
            &mut group.biases,
            &grads.bank.groups[gi].biases,
        )?;
    }
    opt.step("proj.w", model.proj.w.as_mut_slice(), grads.proj_w.as_slice())?;
    opt.step("proj.b", &mut model.proj.b, &grads.proj_b)?;
    if let Head::Crf(trans) = &mut model.head {
        opt.step("crf.trans", trans.t.as_mut_slice(), grads.trans_t.as_slice())?;
        opt.step("crf.start", &mut trans.start, &grads.trans_start)?;
    }
    opt.step_embedding(&mut model.embedding, &grads.embedding)?;
    opt.batches += 1;
    Ok(())
}

/// Visit matching parameter slices of two structurally identical models.
fn zip_params(dst: &mut Model, src: &Model, f: &mut impl FnMut(&mut f64, &f64)) {
    let each = |a: &mut [f64], b: &[f64], f: &mut dyn FnMut(&mut f64, &f64)| {
        for (x, y) in a.iter_mut().zip(b) {
            f(x, y);
        }
    };
    each(
        dst.embedding.matrix.as_mut_slice(),
        src.embedding.matrix.as_slice(),
        f,
    );
    for (dg, sg) in dst.bank.groups.iter_mut().zip(&src.bank.groups) {
        for (dw, sw) in dg.weights.iter_mut().zip(&sg.weights) {
            each(dw.as_mut_slice(), sw.as_slice(), f);
        }
        each(&mut dg.biases, &sg.biases, f);
    }
    each(dst.proj.w.as_mut_slice(), src.proj.w.as_slice(), f);
    each(&mut dst.proj.b, &src.proj.b, f);
    if let (Head::Crf(dt), Head::Crf(st)) = (&mut dst.head, &src.head) {
        each(dt.t.as_mut_slice(), st.t.as_slice(), f);
        each(&mut dt.start, &st.start, f);
    }
}

/// Running mean of parameters across optimizer steps.
#[derive(Debug, Clone)]
pub struct Averager {
    pub model: Model,
    steps: usize,
}

impl Averager {
    pub fn new(model: &Model) -> Self {
        Averager {
            model: model.clone(),
            steps: 1,
        }
    }

    pub fn update(&mut self, current: &Model) {
        self.steps += 1;
        let k = self.steps as f64;
        zip_params(&mut self.model, current, &mut |avg, cur| {
            *avg += (*cur - *avg) / k;
        });
    }
}

/// One pass over the training windows: seeded shuffle, mini-batches of
/// `config.batch`, mean gradient per batch, one optimizer step per batch,
/// fresh dropout masks per window. Returns the mean NLL over all windows.
pub fn train_epoch<R: Rng>(
    model: &mut Model,
    windows: &[ContextWindow],
    config: &TrainConfig,
    opt: &mut Optimizer,
    mut averager: Option<&mut Averager>,
    rng: &mut R,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(rng);
    let mut total_loss = 0.0;
    for (batch_idx, chunk) in order.chunks(config.batch).enumerate() {
        let mut acc = Gradients::zeros_like(model);
        let mut batch_loss = 0.0;
        for &wi in chunk {
            let (loss, g) = model.loss_and_grads(&windows[wi], Mode::Train, rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("loss in batch {batch_idx}"),
                });
            }
            batch_loss += loss;
            acc.add_assign(&g);
        }
        acc.scale(1.0 / chunk.len() as f64);
        apply_gradients(model, &acc, opt)?;
        if let Some(avg) = averager.as_deref_mut() {
            avg.update(model);
        }
        total_loss += batch_loss;
    }
    Ok(total_loss / windows.len() as f64)
}

/// Fraction of windows whose predicted current label matches gold.
pub fn window_accuracy(model: &Model, windows: &[ContextWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyInput {
            context: "accuracy over zero windows",
        });
    }
    let mut hits = 0usize;
    for w in windows {
        let pred = model.predict_label(w)?;
        let gold = *w.gold_labels.last().expect("window has slots");
        if pred == gold {
            hits += 1;
        }
    }
    Ok(hits as f64 / windows.len() as f64)
}

/// One structured log line: train rows carry loss, valid rows accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("log record serializes");
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub coverage: Option<Coverage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub avg: f64,
    pub min: f64,
    pub max: f64,
}

impl SeedSummary {
    pub fn over(values: &[f64]) -> Self {
        let avg = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        SeedSummary { avg, min, max }
    }

    /// The reporting format used throughout: "avg (min, max)" in percent.
    pub fn render(&self) -> String {
        format!(
            "{:.1} ({:.1}, {:.1})",
            self.avg * 100.0,
            self.min * 100.0,
            self.max * 100.0
        )
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub runs: Vec<RunResult>,
    pub log: Vec<LogRecord>,
    pub summary: SeedSummary,
}

impl FitResult {
    /// Highest validation accuracy; ties go to the earlier seed in list order.
    pub fn best(&self) -> &RunResult {
        let mut best = &self.runs[0];
        for r in &self.runs[1..] {
            if r.best_accuracy > best.best_accuracy {
                best = r;
            }
        }
        best
    }
}

fn check_all_labeled(conversations: &[crate::corpus::Conversation]) -> Result<()> {
    for conv in conversations {
        for (i, utt) in conv.utterances.iter().enumerate() {
            if utt.label.is_none() {
                return Err(Error::MissingLabel {
                    conversation: conv.id.clone(),
                    position: i,
                });
            }
        }
    }
    Ok(())
}

/// Build windows for every conversation in a split.
pub fn split_windows(
    conversations: &[crate::corpus::Conversation],
    context: usize,
    vocab: &Vocabulary,
    max_len: usize,
    labels: &LabelSet,
) -> Vec<ContextWindow> {
    conversations
        .iter()
        .flat_map(|c| make_windows(c, context, vocab, max_len, Some(labels)))
        .collect()
}

/// Full training protocol: one independent run per seed, each selecting its
/// best epoch by validation accuracy with early stopping after `patience`
/// epochs without improvement.
pub fn fit(
    split: &CorpusSplit,
    config: &TrainConfig,
    embedding_path: Option<&Path>,
) -> Result<FitResult> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if split.valid.is_empty() {
        return Err(Error::EmptyInput {
            context: "validation split",
        });
    }
    check_all_labeled(&split.train)?;
    check_all_labeled(&split.valid)?;
    if split.labels.len() < 2 {
        return Err(Error::LabelSetMismatch {
            message: format!(
                "training requires at least 2 labels, found {}",
                split.labels.len()
            ),
        });
    }
    let vocab = build_vocab(&split.train, config.min_freq)?;
    let labels = split.labels.clone();
    let train_windows = split_windows(&split.train, config.context, &vocab, config.max_len, &labels);
    let valid_windows = split_windows(&split.valid, config.context, &vocab, config.max_len, &labels);

    let mut runs = Vec::with_capacity(config.seeds.len());
    let mut log = Vec::new();
    for &seed in &config.seeds {
        let run = fit_one_seed(
            seed,
            config,
            vocab.clone(),
            labels.clone(),
            &train_windows,
            &valid_windows,
            embedding_path,
            &mut log,
        )?;
        runs.push(run);
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.best_accuracy).collect();
    Ok(FitResult {
        runs,
        log,
        summary: SeedSummary::over(&accs),
    })
}

#[allow(clippy::too_many_arguments)]
fn fit_one_seed(
    seed: u64,
    config: &TrainConfig,
    vocab: Vocabulary,
    labels: LabelSet,
    train_windows: &[ContextWindow],
    valid_windows: &[ContextWindow],
    embedding_path: Option<&Path>,
    log: &mut Vec<LogRecord>,
) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coverage = None;
    let pretrained = match embedding_path {
        Some(path) => {
            let (table, cov) = load_pretrained(path, &vocab, config.dim, &mut rng)?;
            coverage = Some(cov);
            Some(table)
        }
        None => None,
    };
    let mut model = Model::new(vocab, labels, config.shape(), pretrained, &mut rng)?;
    let mut opt = Optimizer::new(config.optimizer, config.rate);
    let mut averager = config.average.then(|| Averager::new(&model));

    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0usize;
    for epoch in 1..=config.max_epochs {
        let loss = train_epoch(
            &mut model,
            train_windows,
            config,
            &mut opt,
            averager.as_mut(),
            &mut rng,
        )?;
        let candidate = averager.as_ref().map_or(&model, |a| &a.model);
        let acc = window_accuracy(candidate, valid_windows)?;
        log.push(LogRecord {
            seed,
            epoch,
            split: "train".into(),
            loss: Some(loss),
            accuracy: None,
        });
        log.push(LogRecord {
            seed,
            epoch,
            split: "valid".into(),
            loss: None,
            accuracy: Some(acc),
        });
        let improved = best.as_ref().map_or(true, |(b, _, _)| acc > *b);
        if improved {
            best = Some((acc, epoch, candidate.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    let (best_accuracy, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(RunResult {
        seed,
        checkpoint: Checkpoint {
            model: best_model,
            config: config.clone(),
            epoch: best_epoch,
            valid_accuracy: best_accuracy,
            seed,
        },
        best_epoch,
        best_accuracy,
        coverage,
    })
}

/// A trained model with everything needed to reload and predict: config,
/// vocabulary, label set, and all parameters.
///
/// On disk this is a single little-endian binary file:
///
/// ```text
/// magic "DACTCKPT" | u32 version | u64 len + config JSON |
/// u64 seed | u64 epoch | f64 valid_accuracy |
/// u64 count + (u64 len + utf8)* vocabulary tokens (id order) |
/// u64 count + (u64 len + utf8)* label names (index order) |
/// u8 trainable | embedding |V| x dim f64 |
/// per width group: per filter width x dim f64, then biases |
/// projection W (C x p_dim) | projection b (C) |
/// u8 head kind | CRF only: T (C x C) | start (C)
/// ```
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    pub epoch: usize,
    pub valid_accuracy: f64,
    pub seed: u64,
}

const MAGIC: &[u8; 8] = b"DACTCKPT";
const VERSION: u32 = 1;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u64(buf, s.len() as u64);
    buf.extend_from_slice(s.as_bytes());
}

fn put_floats(buf: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        put_f64(buf, x);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn bad(message: impl Into<String>) -> Error {
    Error::BadCheckpoint {
        message: message.into(),
    }
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad("truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| bad("non-utf8 string"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let config = serde_json::to_string(&self.config).expect("config serializes");
        put_str(&mut buf, &config);
        put_u64(&mut buf, self.seed);
        put_u64(&mut buf, self.epoch as u64);
        put_f64(&mut buf, self.valid_accuracy);
        let m = &self.model;
        put_u64(&mut buf, m.vocab.len() as u64);
        for t in m.vocab.tokens() {
            put_str(&mut buf, t);
        }
        put_u64(&mut buf, m.labels.len() as u64);
        for n in m.labels.names() {
            put_str(&mut buf, n);
        }
        buf.push(m.embedding.trainable as u8);
        put_floats(&mut buf, m.embedding.matrix.as_slice());
        for g in &m.bank.groups {
            for w in &g.weights {
                put_floats(&mut buf, w.as_slice());
            }
            put_floats(&mut buf, &g.biases);
        }
        put_floats(&mut buf, m.proj.w.as_slice());
        put_floats(&mut buf, &m.proj.b);
        match &m.head {
            Head::Softmax => buf.push(0),
            Head::Crf(trans) => {
                buf.push(1);
                put_floats(&mut buf, trans.t.as_slice());
                put_floats(&mut buf, &trans.start);
            }
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let config: TrainConfig =
            serde_json::from_str(&r.string()?).map_err(|e| bad(format!("config: {e}")))?;
        let seed = r.u64()?;
        let epoch = r.u64()? as usize;
        let valid_accuracy = r.f64()?;
        let vocab_count = r.u64()? as usize;
        let mut tokens = Vec::with_capacity(vocab_count);
        for _ in 0..vocab_count {
            tokens.push(r.string()?);
        }
        let vocab = Vocabulary::from_id_ordered(tokens)?;
        let label_count = r.u64()? as usize;
        let mut names = Vec::with_capacity(label_count);
        for _ in 0..label_count {
            names.push(r.string()?);
        }
        let labels = LabelSet::from_names(names);
        if labels.len() != label_count {
            return Err(bad("duplicate label names"));
        }
        if labels.is_empty() {
            return Err(bad("empty label set"));
        }
        let shape = config.shape();
        shape.validate().map_err(|e| bad(e.to_string()))?;
        let trainable = r.u8()? != 0;
        let emb_data = r.floats(vocab.len() * shape.dim)?;
        let mut matrix = Mat::zeros(vocab.len(), shape.dim);
        matrix.as_mut_slice().copy_from_slice(&emb_data);
        let embedding = EmbeddingTable { matrix, trainable };
        let mut groups = Vec::with_capacity(shape.widths.len());
        for &width in &shape.widths {
            let mut weights = Vec::with_capacity(shape.filters_per_width);
            for _ in 0..shape.filters_per_width {
                let data = r.floats(width * shape.dim)?;
                let mut w = Mat::zeros(width, shape.dim);
                w.as_mut_slice().copy_from_slice(&data);
                weights.push(w);
            }
            let biases = r.floats(shape.filters_per_width)?;
            groups.push(WidthGroup {
                width,
                weights,
                biases,
            });
        }
        let bank = ConvFilterBank {
            groups,
            dim: shape.dim,
        };
        let c = labels.len();
        let p_dim = bank.p_dim();
        let w_data = r.floats(c * p_dim)?;
        let mut w = Mat::zeros(c, p_dim);
        w.as_mut_slice().copy_from_slice(&w_data);
        let b = r.floats(c)?;
        let proj = ScoreProjection { w, b };
        let head_byte = r.u8()?;
        let head = match (head_byte, shape.head) {
            (0, HeadKind::Softmax) => Head::Softmax,
            (1, HeadKind::Crf) => {
                let t_data = r.floats(c * c)?;
                let mut t = Mat::zeros(c, c);
                t.as_mut_slice().copy_from_slice(&t_data);
                let start = r.floats(c)?;
                Head::Crf(TransitionParams { t, start })
            }
            _ => return Err(bad("head kind disagrees with config")),
        };
        if r.pos != buf.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            model: Model {
                vocab,
                labels,
                embedding,
                bank,
                proj,
                head,
                shape,
            },
            config,
            epoch,
            valid_accuracy,
            seed,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
