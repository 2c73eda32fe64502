//! Dialog-act sequence labeling: a CNN utterance encoder over word
//! embeddings feeding a linear-chain CRF across an utterance context window.
//!
//! Pipeline: `corpus` turns conversation records into padded token-id grids
//! and context windows; `embedding` maps ids to vectors; `encoder` convolves
//! and max-pools each utterance into one feature vector; `crf` scores label
//! sequences and provides exact inference; `model` assembles the pieces and
//! differentiates the loss end to end; `trainer` fits with SGD or AdaGrad
//! under a multi-seed early-stopping protocol; `eval` reports accuracies and
//! runs train/test variant matrices; `cli` exposes the whole thing as one
//! binary.

pub mod cli;
pub mod corpus;
pub mod crf;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod math;
pub mod model;
pub mod trainer;

pub use corpus::{
    build_vocab, load_corpus, make_windows, ContextWindow, Conversation, CorpusSplit,
    IngestOptions, LabelSet, Utterance, Vocabulary, PAD_ID, PAD_LABEL, UNK_ID,
};
pub use error::{Error, Result};
pub use eval::{accuracy, evaluate, majority_baseline, run_matrix, EvalReport, MatrixSpec};
pub use model::{Head, HeadKind, Model, ModelShape};
pub use trainer::{fit, Checkpoint, FitResult, OptKind, TrainConfig};
