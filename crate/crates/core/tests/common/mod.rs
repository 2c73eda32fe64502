//! Shared test support: a brute-force linear-chain oracle that enumerates
//! every label path, plus synthetic corpus generators with known structure.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use dialact::corpus::{Conversation, CorpusSplit, LabelSet, Utterance};
use dialact::crf::TransitionParams;
use dialact::math::Mat;

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// All C^L label paths in lexicographic order.
pub fn all_paths(l: usize, c: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(c.pow(l as u32));
    let mut path = vec![0usize; l];
    loop {
        out.push(path.clone());
        let mut i = l;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
        }
    }
}

/// start[y0] + sum of emissions + sum of adjacent transitions.
pub fn path_score(s: &Mat, trans: &TransitionParams, path: &[usize]) -> f64 {
    let mut score = trans.start[path[0]] + s.get(0, path[0]);
    for t in 1..path.len() {
        score += trans.t.get(path[t - 1], path[t]) + s.get(t, path[t]);
    }
    score
}

pub fn brute_log_z(s: &Mat, trans: &TransitionParams) -> f64 {
    let scores: Vec<f64> = all_paths(s.rows(), s.cols())
        .iter()
        .map(|p| path_score(s, trans, p))
        .collect();
    lse(&scores)
}

pub fn brute_unary(s: &Mat, trans: &TransitionParams) -> Mat {
    let (l, c) = (s.rows(), s.cols());
    let log_z = brute_log_z(s, trans);
    let mut m = Mat::zeros(l, c);
    for t in 0..l {
        for k in 0..c {
            let scores: Vec<f64> = all_paths(l, c)
                .iter()
                .filter(|p| p[t] == k)
                .map(|p| path_score(s, trans, p))
                .collect();
            m.set(t, k, (lse(&scores) - log_z).exp());
        }
    }
    m
}

pub fn brute_pairwise(s: &Mat, trans: &TransitionParams) -> Vec<Mat> {
    let (l, c) = (s.rows(), s.cols());
    let log_z = brute_log_z(s, trans);
    (1..l)
        .map(|t| {
            let mut m = Mat::zeros(c, c);
            for i in 0..c {
                for j in 0..c {
                    let scores: Vec<f64> = all_paths(l, c)
                        .iter()
                        .filter(|p| p[t - 1] == i && p[t] == j)
                        .map(|p| path_score(s, trans, p))
                        .collect();
                    m.set(i, j, (lse(&scores) - log_z).exp());
                }
            }
            m
        })
        .collect()
}

/// Highest-scoring path by exhaustive search; first maximum in lexicographic
/// order wins, matching the decoder's low-index tie rule on generic inputs.
pub fn brute_viterbi(s: &Mat, trans: &TransitionParams) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for p in all_paths(s.rows(), s.cols()) {
        let score = path_score(s, trans, &p);
        if best.as_ref().map_or(true, |(_, b)| score > *b) {
            best = Some((p, score));
        }
    }
    best.expect("at least one path")
}

/// Random chain instance with entries uniform in [-3, 3].
pub fn random_instance<R: Rng>(l: usize, c: usize, rng: &mut R) -> (Mat, TransitionParams) {
    let mut s = Mat::zeros(l, c);
    for t in 0..l {
        for k in 0..c {
            s.set(t, k, rng.gen_range(-3.0..3.0));
        }
    }
    let mut trans = TransitionParams::new(c);
    for i in 0..c {
        for j in 0..c {
            trans.t.set(i, j, rng.gen_range(-3.0..3.0));
        }
        trans.start[i] = rng.gen_range(-3.0..3.0);
    }
    (s, trans)
}

pub fn utterance(tokens: &[String], label: &str, speaker: &str) -> Utterance {
    Utterance {
        speaker: speaker.to_string(),
        tokens: tokens.to_vec(),
        label: Some(label.to_string()),
        raw_text: tokens.join(" "),
    }
}

pub const CYCLE_LABELS: [&str; 4] = ["state", "query", "ack", "close"];

/// Label-cycle corpus: the label sequence is a deterministic 4-cycle from a
/// random start, and each utterance carries its label's cue token with
/// probability 1 - noise (otherwise a filler), among uninformative fillers.
pub fn cycle_corpus<R: Rng>(
    n_conversations: usize,
    utterances_per_conversation: usize,
    noise: f64,
    rng: &mut R,
) -> Vec<Conversation> {
    let fillers: Vec<String> = (0..30).map(|i| format!("filler{i:02}")).collect();
    let mut out = Vec::with_capacity(n_conversations);
    for ci in 0..n_conversations {
        let mut label = rng.gen_range(0..CYCLE_LABELS.len());
        let mut utterances = Vec::with_capacity(utterances_per_conversation);
        for t in 0..utterances_per_conversation {
            let cue = if rng.gen_range(0.0..1.0) < noise {
                fillers[rng.gen_range(0..fillers.len())].clone()
            } else {
                format!("cue-{}", CYCLE_LABELS[label])
            };
            let mut tokens = vec![cue];
            for _ in 0..rng.gen_range(1..3) {
                tokens.push(fillers[rng.gen_range(0..fillers.len())].clone());
            }
            let speaker = if t % 2 == 0 { "a" } else { "b" };
            utterances.push(utterance(&tokens, CYCLE_LABELS[label], speaker));
            label = (label + 1) % CYCLE_LABELS.len();
        }
        out.push(Conversation {
            id: format!("conv{ci:04}"),
            utterances,
        });
    }
    out
}

/// Systematic token-type rewrite standing in for a second transcription
/// source: a fixed cyclic permutation over two cue types and eight filler
/// types (10 of ~34 types, roughly 30%). Applying it to a clean corpus
/// yields the mismatched variant.
pub fn corrupt_tokens(conversations: &[Conversation]) -> Vec<Conversation> {
    let cycle: Vec<String> = ["cue-query", "cue-close"]
        .into_iter()
        .map(str::to_string)
        .chain((0..8).map(|i| format!("filler{i:02}")))
        .collect();
    let map: HashMap<&str, &str> = cycle
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), cycle[(i + 1) % cycle.len()].as_str()))
        .collect();
    conversations
        .iter()
        .map(|conv| Conversation {
            id: conv.id.clone(),
            utterances: conv
                .utterances
                .iter()
                .map(|u| {
                    let tokens: Vec<String> = u
                        .tokens
                        .iter()
                        .map(|t| map.get(t.as_str()).map_or(t.clone(), |m| m.to_string()))
                        .collect();
                    Utterance {
                        speaker: u.speaker.clone(),
                        tokens: tokens.clone(),
                        label: u.label.clone(),
                        raw_text: tokens.join(" "),
                    }
                })
                .collect(),
        })
        .collect()
}

pub const PUNCT_LABELS: [&str; 3] = ["statement", "question", "exclaim"];

/// Corpus whose strongest cue is a punctuation token: the final token is
/// always the label's punctuation mark; a weaker word cue appears with
/// probability `word_cue`. Stripping punctuation removes the strong cue.
pub fn punct_corpus<R: Rng>(
    n_conversations: usize,
    utterances_per_conversation: usize,
    word_cue: f64,
    rng: &mut R,
) -> Vec<Conversation> {
    let fillers: Vec<String> = (0..20).map(|i| format!("word{i:02}")).collect();
    let marks = [".", "?", "!"];
    let mut out = Vec::with_capacity(n_conversations);
    for ci in 0..n_conversations {
        let mut label = rng.gen_range(0..PUNCT_LABELS.len());
        let mut utterances = Vec::with_capacity(utterances_per_conversation);
        for t in 0..utterances_per_conversation {
            let mut tokens = Vec::new();
            if rng.gen_range(0.0..1.0) < word_cue {
                tokens.push(format!("say-{}", PUNCT_LABELS[label]));
            } else {
                tokens.push(fillers[rng.gen_range(0..fillers.len())].clone());
            }
            tokens.push(fillers[rng.gen_range(0..fillers.len())].clone());
            tokens.push(marks[label].to_string());
            let speaker = if t % 2 == 0 { "a" } else { "b" };
            utterances.push(utterance(&tokens, PUNCT_LABELS[label], speaker));
            label = (label + 1) % PUNCT_LABELS.len();
        }
        out.push(Conversation {
            id: format!("pconv{ci:04}"),
            utterances,
        });
    }
    out
}

/// Deterministic contiguous split by conversation index.
pub fn assign_splits(
    mut conversations: Vec<Conversation>,
    n_train: usize,
    n_valid: usize,
    labels: &[&str],
) -> CorpusSplit {
    assert!(n_train + n_valid <= conversations.len());
    let rest = conversations.split_off(n_train + n_valid);
    let valid = conversations.split_off(n_train);
    CorpusSplit {
        train: conversations,
        valid,
        test: rest,
        labels: LabelSet::from_names(labels.iter().copied()),
    }
}

/// Write conversations as the line-delimited record format the CLI reads.
pub fn write_corpus_file(path: &Path, conversations: &[Conversation]) {
    let mut out = String::new();
    for conv in conversations {
        for u in &conv.utterances {
            let mut record = serde_json::json!({
                "conversation_id": conv.id,
                "speaker": u.speaker,
                "text": u.tokens.join(" "),
            });
            if let Some(label) = &u.label {
                record["label"] = serde_json::json!(label);
            }
            out.push_str(&record.to_string());
            out.push('\n');
        }
    }
    std::fs::write(path, out).expect("write corpus file");
}

/// Write the conversation -> split-name assignment file.
pub fn write_split_file(path: &Path, split: &CorpusSplit) {
    let mut map = serde_json::Map::new();
    for (name, convs) in [
        ("train", &split.train),
        ("valid", &split.valid),
        ("test", &split.test),
    ] {
        for c in convs {
            map.insert(c.id.clone(), serde_json::json!(name));
        }
    }
    std::fs::write(path, serde_json::Value::Object(map).to_string()).expect("write split file");
}
