//! Corpus ingestion: conversations, label sets, vocabularies, preprocessing,
//! and fixed-shape context windows.
//!
//! Corpus files are JSON Lines: one utterance record per line with fields
//! `conversation_id`, `speaker`, `text` (whitespace-tokenized) or `tokens`,
//! and an optional `label`. Records of one conversation must be contiguous
//! and in dialog order. The split spec is a sidecar JSON object mapping
//! conversation id to `"train" | "valid" | "test"`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

use crate::error::{Error, Result};

/// Token id reserved for padding.
pub const PAD_ID: usize = 0;
/// Token id reserved for out-of-vocabulary tokens.
pub const UNK_ID: usize = 1;
/// Label placeholder carried by synthetic padding slots; excluded from loss.
pub const PAD_LABEL: usize = usize::MAX;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// One speaker turn segment: the per-timestep unit of the sequence model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: String,
    pub tokens: Vec<String>,
    pub label: Option<String>,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// Ordered set of dialog act tag names with a dense name<->index bijection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new() -> Self {
        LabelSet {
            names: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_names<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        let mut set = LabelSet::new();
        for n in names {
            set.get_or_insert(&n.into());
        }
        set
    }

    pub fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Token -> dense id map with reserved PAD=0 and UNK=1. Built from the
/// training split only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn with_reserved() -> Self {
        let tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    /// Rebuild from an id-ordered token list (checkpoint loading).
    pub fn from_id_ordered(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(Error::BadCheckpoint {
                message: "vocabulary must start with the reserved PAD and UNK tokens".into(),
            });
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary { tokens, index })
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Tokens in id order, reserved entries included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The model's input unit: n+1 consecutive utterance grids plus gold labels.
/// Slot `n` (last) is the current utterance; leading slots may be synthetic
/// padding marked in `pad_mask`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    /// n+1 token-id grids, each exactly `max_len` long.
    pub grids: Vec<Vec<usize>>,
    /// Gold label index per slot; `PAD_LABEL` for padding slots or unlabeled input.
    pub gold_labels: Vec<usize>,
    /// True for synthetic leading padding slots.
    pub pad_mask: Vec<bool>,
    /// (conversation id, utterance position of the current slot).
    pub source: (String, usize),
}

impl ContextWindow {
    pub fn slots(&self) -> usize {
        self.grids.len()
    }

    /// Index of the first non-padding slot.
    pub fn first_real_slot(&self) -> usize {
        self.pad_mask.iter().position(|p| !p).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<Conversation>,
    pub valid: Vec<Conversation>,
    pub test: Vec<Conversation>,
    pub labels: LabelSet,
}

impl CorpusSplit {
    /// (train, valid, test) utterance totals.
    pub fn utterance_counts(&self) -> (usize, usize, usize) {
        let count = |cs: &[Conversation]| cs.iter().map(|c| c.utterances.len()).sum();
        (count(&self.train), count(&self.valid), count(&self.test))
    }
}

/// Ingestion-time preprocessing switches.
#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            lowercase: true,
            strip_punctuation: false,
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    conversation_id: String,
    #[serde(default)]
    speaker: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    label: Option<String>,
}

/// On-disk record form, used when writing corpora back out.
#[derive(Serialize)]
pub struct OutRecord<'a> {
    pub conversation_id: &'a str,
    pub speaker: &'a str,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<&'a str>,
}

fn parse_record(line: &str, path: &Path, line_no: usize, opts: IngestOptions) -> Result<(String, Utterance)> {
    let malformed = |message: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let (mut tokens, raw_text) = match (raw.text, raw.tokens) {
        (Some(_), Some(_)) => {
            return Err(malformed("record has both `text` and `tokens`".into()));
        }
        (Some(text), None) => {
            let toks = text.split_whitespace().map(str::to_string).collect();
            (toks, text)
        }
        (None, Some(tokens)) => {
            let raw = tokens.join(" ");
            (tokens, raw)
        }
        (None, None) => {
            return Err(malformed("record has neither `text` nor `tokens`".into()));
        }
    };
    if opts.lowercase {
        for t in &mut tokens {
            *t = t.to_lowercase();
        }
    }
    let mut utt = Utterance {
        speaker: raw.speaker.unwrap_or_default(),
        tokens,
        label: raw.label,
        raw_text,
    };
    if opts.strip_punctuation {
        utt = strip_punctuation(&utt);
    }
    Ok((raw.conversation_id, utt))
}

/// Read a corpus file into conversations, without splitting. Labels may be
/// absent (prediction input).
pub fn read_conversations(path: &Path, opts: IngestOptions) -> Result<Vec<Conversation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut conversations: Vec<Conversation> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (conv_id, utt) = parse_record(&line, path, line_no, opts)?;
        match conversations.last_mut() {
            Some(last) if last.id == conv_id => last.utterances.push(utt),
            _ => {
                if seen.contains_key(&conv_id) {
                    return Err(Error::MalformedRecord {
                        path: path.to_path_buf(),
                        line: line_no,
                        message: format!(
                            "records for conversation {conv_id} are not contiguous"
                        ),
                    });
                }
                seen.insert(conv_id.clone(), conversations.len());
                conversations.push(Conversation {
                    id: conv_id,
                    utterances: vec![utt],
                });
            }
        }
    }
    Ok(conversations)
}

/// Read the sidecar split spec: a JSON object `{conversation_id: split}`.
pub fn read_split_spec(path: &Path) -> Result<HashMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 0,
        message: format!("split spec: {e}"),
    })
}

/// Load a corpus file and partition it according to the split spec.
///
/// Labels from the train and valid splits form the `LabelSet` (train first,
/// first-occurrence order); a label seen only in test is an error.
pub fn load_corpus(
    corpus_path: &Path,
    split_path: &Path,
    opts: IngestOptions,
) -> Result<CorpusSplit> {
    let conversations = read_conversations(corpus_path, opts)?;
    let split_spec = read_split_spec(split_path)?;
    split_conversations(conversations, &split_spec)
}

/// Partition already-read conversations. Exposed separately so callers that
/// build conversations in memory (tests, synthetic corpora) share one path.
pub fn split_conversations(
    conversations: Vec<Conversation>,
    split_spec: &HashMap<String, String>,
) -> Result<CorpusSplit> {
    let mut split = CorpusSplit {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        labels: LabelSet::new(),
    };
    for conv in conversations {
        let name = split_spec
            .get(&conv.id)
            .ok_or_else(|| Error::MissingSplit {
                conversation: conv.id.clone(),
            })?;
        match name.as_str() {
            "train" => split.train.push(conv),
            "valid" => split.valid.push(conv),
            "test" => split.test.push(conv),
            other => {
                return Err(Error::UnknownSplit {
                    name: other.to_string(),
                    conversation: conv.id,
                })
            }
        }
    }
    for conv in split.train.iter().chain(&split.valid) {
        for utt in &conv.utterances {
            if let Some(label) = &utt.label {
                split.labels.get_or_insert(label);
            }
        }
    }
    let mut test_only: Vec<String> = Vec::new();
    for conv in &split.test {
        for utt in &conv.utterances {
            if let Some(label) = &utt.label {
                if split.labels.index_of(label).is_none() && !test_only.contains(label) {
                    test_only.push(label.clone());
                }
            }
        }
    }
    if !test_only.is_empty() {
        return Err(Error::TestOnlyLabels { labels: test_only });
    }
    Ok(split)
}

/// Build the vocabulary from training conversations: every token with
/// frequency >= `min_freq` gets an id, assigned in first-occurrence order.
pub fn build_vocab(train: &[Conversation], min_freq: usize) -> Result<Vocabulary> {
    assert!(min_freq >= 1, "min_freq must be >= 1");
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for conv in train {
        for utt in &conv.utterances {
            for tok in &utt.tokens {
                let count = freq.entry(tok.as_str()).or_insert(0);
                if *count == 0 {
                    order.push(tok.as_str());
                }
                *count += 1;
            }
        }
    }
    let mut vocab = Vocabulary::with_reserved();
    for tok in order {
        if tok == PAD_TOKEN || tok == UNK_TOKEN {
            return Err(Error::ReservedToken {
                token: tok.to_string(),
            });
        }
        if freq[tok] >= min_freq {
            let id = vocab.tokens.len();
            vocab.tokens.push(tok.to_string());
            vocab.index.insert(tok.to_string(), id);
        }
    }
    Ok(vocab)
}

fn is_punct_char(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
        || matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '"' | '\'' | '(' | ')' | '-')
}

/// Remove punctuation: tokens that are solely punctuation disappear, and
/// punctuation attached to word tokens is trimmed from both ends. Idempotent;
/// casing and word order are untouched. An utterance may become empty.
pub fn strip_punctuation(u: &Utterance) -> Utterance {
    let tokens = u
        .tokens
        .iter()
        .filter_map(|t| {
            let trimmed = t.trim_matches(is_punct_char);
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_string())
            }
        })
        .collect();
    Utterance {
        speaker: u.speaker.clone(),
        tokens,
        label: u.label.clone(),
        raw_text: u.raw_text.clone(),
    }
}

fn encode_grid(utt: &Utterance, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut grid = vec![PAD_ID; max_len];
    for (slot, tok) in grid.iter_mut().zip(utt.tokens.iter()) {
        *slot = vocab.id(tok);
    }
    grid
}

/// One window per utterance position; positions `t < n` get leading synthetic
/// padding slots so every window has exactly n+1 slots, oldest first.
pub fn make_windows(
    conversation: &Conversation,
    n: usize,
    vocab: &Vocabulary,
    max_len: usize,
    labels: Option<&LabelSet>,
) -> Vec<ContextWindow> {
    assert!(max_len >= 1, "max_len must be >= 1");
    let grids: Vec<Vec<usize>> = conversation
        .utterances
        .iter()
        .map(|u| encode_grid(u, vocab, max_len))
        .collect();
    let gold: Vec<usize> = conversation
        .utterances
        .iter()
        .map(|u| {
            u.label
                .as_deref()
                .and_then(|name| labels.and_then(|ls| ls.index_of(name)))
                .unwrap_or(PAD_LABEL)
        })
        .collect();

    (0..conversation.utterances.len())
        .map(|t| {
            let mut w = ContextWindow {
                grids: Vec::with_capacity(n + 1),
                gold_labels: Vec::with_capacity(n + 1),
                pad_mask: Vec::with_capacity(n + 1),
                source: (conversation.id.clone(), t),
            };
            for offset in (0..=n).rev() {
                if t < offset {
                    w.grids.push(vec![PAD_ID; max_len]);
                    w.gold_labels.push(PAD_LABEL);
                    w.pad_mask.push(true);
                } else {
                    let pos = t - offset;
                    w.grids.push(grids[pos].clone());
                    w.gold_labels.push(gold[pos]);
                    w.pad_mask.push(false);
                }
            }
            w
        })
        .collect()
}
