//! The assembled tagger: embedding table, shared filter bank, score
//! projection, and either a linear-chain CRF head or the softmax head used
//! by the context-0 baseline. Owns the loss/gradient plumbing end to end.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextWindow, LabelSet, Vocabulary, PAD_LABEL};
use crate::crf::{
    crf_backward, nll, project_backward, project_scores, softmax_backward, viterbi,
    ScoreProjection, TransitionParams, WindowScores,
};
use crate::encoder::{encode_window, encoder_backward, ConvFilterBank, Mode};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::math::{argmax_first, logsumexp, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Softmax over the current utterance only (context must be 0).
    Softmax,
    /// Linear-chain CRF over the window.
    Crf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Softmax,
    Crf(TransitionParams),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Softmax => HeadKind::Softmax,
            Head::Crf(_) => HeadKind::Crf,
        }
    }
}

/// Structural hyperparameters needed to build a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub context: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub widths: Vec<usize>,
    pub filters_per_width: usize,
    pub dim: usize,
    pub head: HeadKind,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 1 {
            return Err(Error::Config {
                field: "max_len".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config {
                field: "dropout".into(),
                message: "must be in [0, 1)".into(),
            });
        }
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config {
                field: "widths".into(),
                message: "need at least one nonzero filter width".into(),
            });
        }
        if self.filters_per_width == 0 {
            return Err(Error::Config {
                field: "filters_per_width".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.dim == 0 {
            return Err(Error::Config {
                field: "dim".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.head == HeadKind::Softmax && self.context != 0 {
            return Err(Error::Config {
                field: "context".into(),
                message: "softmax head is the context-0 baseline; use the crf head for context > 0"
                    .into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub vocab: Vocabulary,
    pub labels: LabelSet,
    pub embedding: EmbeddingTable,
    pub bank: ConvFilterBank,
    pub proj: ScoreProjection,
    pub head: Head,
    pub shape: ModelShape,
}

/// Gradients for every trainable parameter group. Embedding gradients stay
/// sparse (row id -> d-vector), keyed so batch merging is deterministic.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub bank: ConvFilterBank,
    pub proj_w: Mat,
    pub proj_b: Vec<f64>,
    pub trans_t: Mat,
    pub trans_start: Vec<f64>,
    pub embedding: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let c = model.labels.len().max(1);
        Gradients {
            bank: model.bank.zeros_like(),
            proj_w: Mat::zeros(model.proj.w.rows(), model.proj.w.cols()),
            proj_b: vec![0.0; model.proj.b.len()],
            trans_t: Mat::zeros(c, c),
            trans_start: vec![0.0; c],
            embedding: BTreeMap::new(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (g, o) in self.bank.groups.iter_mut().zip(&other.bank.groups) {
            for (w, ow) in g.weights.iter_mut().zip(&o.weights) {
                w.add_assign(ow);
            }
            for (b, ob) in g.biases.iter_mut().zip(&o.biases) {
                *b += ob;
            }
        }
        self.proj_w.add_assign(&other.proj_w);
        for (b, ob) in self.proj_b.iter_mut().zip(&other.proj_b) {
            *b += ob;
        }
        self.trans_t.add_assign(&other.trans_t);
        for (s, os) in self.trans_start.iter_mut().zip(&other.trans_start) {
            *s += os;
        }
        for (id, vec) in &other.embedding {
            let acc = self
                .embedding
                .entry(*id)
                .or_insert_with(|| vec![0.0; vec.len()]);
            for (a, v) in acc.iter_mut().zip(vec) {
                *a += v;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.bank.groups {
            for w in &mut g.weights {
                w.scale(factor);
            }
            for b in &mut g.biases {
                *b *= factor;
            }
        }
        self.proj_w.scale(factor);
        for b in &mut self.proj_b {
            *b *= factor;
        }
        self.trans_t.scale(factor);
        for s in &mut self.trans_start {
            *s *= factor;
        }
        for vec in self.embedding.values_mut() {
            for v in vec {
                *v *= factor;
            }
        }
    }
}

impl Model {
    /// Build a fresh model. `pretrained` supplies the embedding table when
    /// given; otherwise rows are random in [-0.25, 0.25].
    pub fn new<R: Rng>(
        vocab: Vocabulary,
        labels: LabelSet,
        shape: ModelShape,
        pretrained: Option<EmbeddingTable>,
        rng: &mut R,
    ) -> Result<Self> {
        shape.validate()?;
        if labels.is_empty() {
            return Err(Error::Config {
                field: "labels".into(),
                message: "label set is empty".into(),
            });
        }
        let embedding = match pretrained {
            Some(table) => {
                if table.vocab_size() != vocab.len() || table.dim() != shape.dim {
                    return Err(Error::ShapeMismatch {
                        context: "pretrained embedding table",
                        expected: vocab.len() * shape.dim,
                        found: table.vocab_size() * table.dim(),
                    });
                }
                table
            }
            None => EmbeddingTable::random(vocab.len(), shape.dim, rng),
        };
        let bank = ConvFilterBank::new(&shape.widths, shape.filters_per_width, shape.dim, rng);
        let proj = ScoreProjection::new(labels.len(), bank.p_dim(), rng);
        let head = match shape.head {
            HeadKind::Softmax => Head::Softmax,
            HeadKind::Crf => Head::Crf(TransitionParams::new(labels.len())),
        };
        Ok(Model {
            vocab,
            labels,
            embedding,
            bank,
            proj,
            head,
            shape,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn param_count(&self) -> usize {
        let c = self.num_labels();
        let head = match &self.head {
            Head::Softmax => 0,
            Head::Crf(_) => c * c + c,
        };
        self.embedding.matrix.rows() * self.embedding.matrix.cols()
            + self.bank.param_count()
            + self.proj.w.rows() * self.proj.w.cols()
            + self.proj.b.len()
            + head
    }

    fn window_scores<R: Rng>(
        &self,
        w: &ContextWindow,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<crate::encoder::PooledVector>, crate::encoder::EncodeCache, WindowScores)>
    {
        let rate = match mode {
            Mode::Train => self.shape.dropout,
            Mode::Infer => 0.0,
        };
        let (ps, cache) = encode_window(w, &self.bank, &self.embedding, rate, mode, rng)?;
        let ws = project_scores(&ps, &self.proj, &w.pad_mask)?;
        Ok((ps, cache, ws))
    }

    /// Window loss under the model's head.
    pub fn loss<R: Rng>(&self, w: &ContextWindow, mode: Mode, rng: &mut R) -> Result<f64> {
        let (_, _, ws) = self.window_scores(w, mode, rng)?;
        self.head_loss(&ws, &w.gold_labels).map(|(loss, _)| loss)
    }

    fn head_loss(&self, ws: &WindowScores, gold: &[usize]) -> Result<(f64, Option<Mat>)> {
        match &self.head {
            Head::Crf(trans) => {
                let loss = nll(ws, trans, gold)?;
                Ok((loss, None))
            }
            Head::Softmax => {
                let last = ws.s.rows() - 1;
                let row = ws.s.row(last);
                let g = gold[last];
                if g == PAD_LABEL || g >= row.len() {
                    return Err(Error::ShapeMismatch {
                        context: "gold label index",
                        expected: row.len(),
                        found: g,
                    });
                }
                let loss = logsumexp(row) - row[g];
                Ok((loss, None))
            }
        }
    }

    /// One window's loss and exact gradients.
    pub fn loss_and_grads<R: Rng>(
        &self,
        w: &ContextWindow,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Gradients)> {
        let (ps, cache, ws) = self.window_scores(w, mode, rng)?;
        let mut grads = Gradients::zeros_like(self);
        let loss;
        let ds: Mat;
        match &self.head {
            Head::Crf(trans) => {
                loss = nll(&ws, trans, &w.gold_labels)?;
                let g = crf_backward(&ws, trans, &w.gold_labels)?;
                ds = g.ds;
                grads.trans_t = g.dt;
                grads.trans_start = g.dstart;
            }
            Head::Softmax => {
                let (l, _) = self.head_loss(&ws, &w.gold_labels)?;
                loss = l;
                let last = ws.s.rows() - 1;
                let drow = softmax_backward(ws.s.row(last), w.gold_labels[last]);
                let mut m = Mat::zeros(ws.s.rows(), ws.s.cols());
                m.row_mut(last).copy_from_slice(&drow);
                ds = m;
            }
        }
        let (dw, db, dps) = project_backward(&ds, &ps, &self.proj)?;
        grads.proj_w = dw;
        grads.proj_b = db;
        let enc = encoder_backward(&dps, &cache, &self.bank)?;
        grads.bank = enc.bank;
        for (id, vec) in enc.embedding {
            grads.embedding.insert(id, vec);
        }
        Ok((loss, grads))
    }

    /// Predicted label index for the window's current (last) utterance.
    /// Deterministic: inference mode, no dropout, Viterbi ties to the lowest
    /// label index.
    pub fn predict_label(&self, w: &ContextWindow) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(0); // never drawn from in infer mode
        let (_, _, ws) = self.window_scores(w, Mode::Infer, &mut rng)?;
        match &self.head {
            Head::Crf(trans) => {
                let real = ws.real()?;
                let (path, _) = viterbi(&real, trans)?;
                Ok(*path.last().expect("non-empty path"))
            }
            Head::Softmax => {
                let last = ws.s.rows() - 1;
                Ok(argmax_first(ws.s.row(last)))
            }
        }
    }

    /// Predicted label name for the current utterance.
    pub fn predict_name(&self, w: &ContextWindow) -> Result<&str> {
        Ok(self.labels.name(self.predict_label(w)?))
    }
}
