//! Accuracy and per-class diagnostics, the majority-class baseline, and the
//! train-variant x test-variant experiment matrix with per-seed statistics.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, Conversation, CorpusSplit, IngestOptions, LabelSet};
use crate::error::{Error, Result};
use crate::math::Mat;
use crate::trainer::{fit, split_windows, Checkpoint, SeedSummary, TrainConfig};

/// Utterance-level micro accuracy.
pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::ShapeMismatch {
            context: "prediction count",
            expected: golds.len(),
            found: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput {
            context: "accuracy over zero predictions",
        });
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Accuracy of predicting the most frequent training label everywhere.
/// Frequency ties go to the lower label index.
pub fn majority_baseline(train_labels: &[usize], test_labels: &[usize]) -> Result<f64> {
    if train_labels.is_empty() {
        return Err(Error::EmptyInput {
            context: "majority baseline training labels",
        });
    }
    if test_labels.is_empty() {
        return Err(Error::EmptyInput {
            context: "majority baseline test labels",
        });
    }
    let c = train_labels.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; c];
    for &l in train_labels {
        counts[l] += 1;
    }
    let majority = crate::math::argmax_first(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let hits = test_labels.iter().filter(|&&l| l == majority).count();
    Ok(hits as f64 / test_labels.len() as f64)
}

/// Gold label indices of every utterance, in order. Errors on unlabeled
/// utterances or labels outside `labels`.
pub fn conversation_labels(
    conversations: &[Conversation],
    labels: &LabelSet,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for conv in conversations {
        for (i, utt) in conv.utterances.iter().enumerate() {
            let name = utt.label.as_ref().ok_or_else(|| Error::MissingLabel {
                conversation: conv.id.clone(),
                position: i,
            })?;
            let idx = labels.index_of(name).ok_or_else(|| Error::LabelSetMismatch {
                message: format!(
                    "label {name:?} in conversation {} is not in the checkpoint label set",
                    conv.id
                ),
            })?;
            out.push(idx);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows gold, columns predicted.
    pub confusion: Mat,
    pub n_utterances: usize,
    pub seed_results: Vec<(u64, f64)>,
    pub summary: SeedSummary,
}

/// Assemble a report from a gold x predicted count matrix.
fn report_from_confusion(
    confusion: Mat,
    labels: &LabelSet,
    seed_results: Vec<(u64, f64)>,
) -> EvalReport {
    let c = confusion.rows();
    let mut total = 0.0;
    let mut trace = 0.0;
    let mut row_sums = vec![0.0; c];
    let mut col_sums = vec![0.0; c];
    for g in 0..c {
        for p in 0..c {
            let v = confusion.get(g, p);
            total += v;
            row_sums[g] += v;
            col_sums[p] += v;
            if g == p {
                trace += v;
            }
        }
    }
    let per_class = (0..c)
        .map(|k| {
            let tp = confusion.get(k, k);
            let precision = if col_sums[k] > 0.0 { tp / col_sums[k] } else { 0.0 };
            let recall = if row_sums[k] > 0.0 { tp / row_sums[k] } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label: labels.name(k).to_string(),
                precision,
                recall,
                f1,
                support: row_sums[k] as usize,
            }
        })
        .collect();
    let accs: Vec<f64> = seed_results.iter().map(|&(_, a)| a).collect();
    EvalReport {
        accuracy: trace / total,
        per_class,
        confusion,
        n_utterances: total as usize,
        seed_results,
        summary: SeedSummary::over(&accs),
    }
}

/// Score one checkpoint on a labeled corpus. Windows are always built with
/// the checkpoint's context size and vocabulary; tokens unseen in training
/// map to UNK. The corpus must not use labels outside the checkpoint's set.
pub fn evaluate(checkpoint: &Checkpoint, conversations: &[Conversation]) -> Result<EvalReport> {
    let model = &checkpoint.model;
    conversation_labels(conversations, &model.labels)?;
    let c = model.num_labels();
    let mut confusion = Mat::zeros(c, c);
    let mut hits = 0usize;
    let mut total = 0usize;
    for w in split_windows(
        conversations,
        model.shape.context,
        &model.vocab,
        model.shape.max_len,
        &model.labels,
    )
    .iter()
    {
        let pred = model.predict_label(w)?;
        let gold = *w.gold_labels.last().expect("window has slots");
        confusion.add_at(gold, pred, 1.0);
        total += 1;
        if pred == gold {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput {
            context: "evaluation corpus",
        });
    }
    let acc = hits as f64 / total as f64;
    Ok(report_from_confusion(
        confusion,
        &model.labels,
        vec![(checkpoint.seed, acc)],
    ))
}

/// Pool several same-shape reports (one per seed) into one: confusions sum,
/// seed accuracies feed the avg/min/max summary.
pub fn pool_reports(reports: &[EvalReport], labels: &LabelSet) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::EmptyInput {
            context: "report pool",
        });
    }
    let c = reports[0].confusion.rows();
    let mut confusion = Mat::zeros(c, c);
    let mut seed_results = Vec::new();
    for r in reports {
        if r.confusion.rows() != c {
            return Err(Error::ShapeMismatch {
                context: "pooled confusion size",
                expected: c,
                found: r.confusion.rows(),
            });
        }
        confusion.add_assign(&r.confusion);
        seed_results.extend(r.seed_results.iter().copied());
    }
    Ok(report_from_confusion(confusion, labels, seed_results))
}

/// Render the human-readable report: headline accuracy, then per-class rows.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "accuracy {} over {} utterances\n",
        report.summary.render(),
        report.n_utterances
    ));
    out.push_str("label           precision  recall     f1         support\n");
    for m in &report.per_class {
        out.push_str(&format!(
            "{:<15} {:<10.3} {:<10.3} {:<10.3} {}\n",
            m.label, m.precision, m.recall, m.f1, m.support
        ));
    }
    out
}

/// One corpus variant: a records file plus its preprocessing flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub strip_punctuation: bool,
    #[serde(default = "default_true")]
    pub lowercase: bool,
}

fn default_true() -> bool {
    true
}

/// Experiment matrix: train on each train variant (once per seed), test every
/// best checkpoint on each test variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub train: Vec<VariantSpec>,
    pub test: Vec<VariantSpec>,
    /// Split assignment file shared by all variants.
    pub splits: PathBuf,
    #[serde(default)]
    pub config: TrainConfig,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
}

/// A variant already loaded into memory.
#[derive(Debug, Clone)]
pub struct MatrixVariant {
    pub name: String,
    pub split: CorpusSplit,
}

#[derive(Debug, Clone)]
pub struct MatrixResult {
    pub train_names: Vec<String>,
    pub test_names: Vec<String>,
    /// cells[i][j] = trained on train variant i, tested on test variant j.
    pub cells: Vec<Vec<EvalReport>>,
}

impl MatrixResult {
    /// Rows are test variants, columns train variants, cells "avg (min, max)".
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<16}", "test \\ train"));
        for t in &self.train_names {
            out.push_str(&format!(" {t:<18}"));
        }
        out.push('\n');
        for (j, test_name) in self.test_names.iter().enumerate() {
            out.push_str(&format!("{test_name:<16}"));
            for i in 0..self.train_names.len() {
                out.push_str(&format!(" {:<18}", self.cells[i][j].summary.render()));
            }
            out.push('\n');
        }
        out
    }
}

/// Run the matrix over variants already in memory. All variants must share
/// one label set; fitting uses each train variant's train+valid splits and
/// evaluation uses each test variant's test split.
pub fn run_matrix_loaded(
    train: &[MatrixVariant],
    test: &[MatrixVariant],
    config: &TrainConfig,
    embeddings: Option<&Path>,
) -> Result<MatrixResult> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput {
            context: "matrix variants",
        });
    }
    let labels = &train[0].split.labels;
    for v in train.iter().chain(test) {
        if v.split.labels.names() != labels.names() {
            return Err(Error::LabelSetMismatch {
                message: format!(
                    "variant {:?} has label set {:?}, expected {:?}",
                    v.name,
                    v.split.labels.names(),
                    labels.names()
                ),
            });
        }
    }
    let mut cells = Vec::with_capacity(train.len());
    for tv in train {
        let fitted = fit(&tv.split, config, embeddings)
            .map_err(|e| e.in_context(format!("training variant {:?}", tv.name)))?;
        let mut row = Vec::with_capacity(test.len());
        for ev in test {
            let mut reports = Vec::with_capacity(fitted.runs.len());
            for run in &fitted.runs {
                let r = evaluate(&run.checkpoint, &ev.split.test).map_err(|e| {
                    e.in_context(format!(
                        "cell trained on {:?}, tested on {:?}, seed {}",
                        tv.name, ev.name, run.seed
                    ))
                })?;
                reports.push(r);
            }
            row.push(pool_reports(&reports, labels)?);
        }
        cells.push(row);
    }
    Ok(MatrixResult {
        train_names: train.iter().map(|v| v.name.clone()).collect(),
        test_names: test.iter().map(|v| v.name.clone()).collect(),
        cells,
    })
}

fn load_variant(spec: &VariantSpec, splits: &Path) -> Result<MatrixVariant> {
    let options = IngestOptions {
        lowercase: spec.lowercase,
        strip_punctuation: spec.strip_punctuation,
    };
    let split = load_corpus(&spec.path, splits, options)
        .map_err(|e| e.in_context(format!("variant {:?}", spec.name)))?;
    Ok(MatrixVariant {
        name: spec.name.clone(),
        split,
    })
}

/// File-level entry point: load every variant, then run the grid.
pub fn run_matrix(spec: &MatrixSpec) -> Result<MatrixResult> {
    let train: Vec<MatrixVariant> = spec
        .train
        .iter()
        .map(|v| load_variant(v, &spec.splits))
        .collect::<Result<_>>()?;
    let test: Vec<MatrixVariant> = spec
        .test
        .iter()
        .map(|v| load_variant(v, &spec.splits))
        .collect::<Result<_>>()?;
    run_matrix_loaded(&train, &test, &spec.config, spec.embeddings.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, Utterance};
    use crate::model::{HeadKind, Model, ModelShape};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn utt(tokens: &[&str], label: &str) -> Utterance {
        Utterance {
            speaker: "s".into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            label: Some(label.to_string()),
            raw_text: tokens.join(" "),
        }
    }

    fn separable_split(n_conversations: usize, len: usize) -> CorpusSplit {
        let mut convs = Vec::new();
        for ci in 0..n_conversations {
            let utterances = (0..len)
                .map(|t| {
                    if (ci + t) % 2 == 0 {
                        utt(&["aye", "indeed"], "A")
                    } else {
                        utt(&["nay", "never"], "B")
                    }
                })
                .collect();
            convs.push(Conversation {
                id: format!("c{ci}"),
                utterances,
            });
        }
        let test = convs.split_off(n_conversations - 2);
        let valid = convs.split_off(convs.len() - 2);
        CorpusSplit {
            train: convs,
            valid,
            test,
            labels: LabelSet::from_names(["A", "B"]),
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            context: 1,
            rate: 0.05,
            optimizer: crate::trainer::OptKind::Sgd,
            batch: 8,
            dropout: 0.0,
            widths: vec![2],
            filters_per_width: 3,
            dim: 6,
            max_epochs: 30,
            patience: 5,
            seeds: vec![7],
            max_len: 4,
            min_freq: 1,
            head: HeadKind::Crf,
            average: false,
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_rejects_empty_and_mismatched() {
        assert!(matches!(
            accuracy(&[], &[]),
            Err(Error::EmptyInput { .. })
        ));
        assert!(matches!(
            accuracy(&[1], &[1, 2]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn majority_sixty_forty_matches_frequency_oracle() {
        let train: Vec<usize> = std::iter::repeat(0)
            .take(60)
            .chain(std::iter::repeat(1).take(40))
            .collect();
        let test: Vec<usize> = std::iter::repeat(0)
            .take(6)
            .chain(std::iter::repeat(1).take(4))
            .collect();
        // oracle: count frequencies by hand
        let mut counts = std::collections::HashMap::new();
        for &l in &train {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        let (&winner, _) = counts.iter().max_by_key(|&(_, c)| c).unwrap();
        let oracle = test.iter().filter(|&&l| l == winner).count() as f64 / test.len() as f64;
        let got = majority_baseline(&train, &test).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - 0.60).abs() < 1e-15);
    }

    #[test]
    fn majority_tie_prefers_lower_index() {
        let train = [1, 0, 1, 0];
        let test = [0, 0, 1];
        assert!((majority_baseline(&train, &test).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn majority_rejects_empty() {
        assert!(majority_baseline(&[], &[0]).is_err());
        assert!(majority_baseline(&[0], &[]).is_err());
    }

    #[test]
    fn evaluate_memorized_training_set_is_perfect() {
        let split = separable_split(10, 6);
        let mut config = tiny_config();
        config.max_epochs = 50;
        let fitted = fit(&split, &config, None).unwrap();
        let report = evaluate(&fitted.best().checkpoint, &split.train).unwrap();
        assert!(
            (report.accuracy - 1.0).abs() < 1e-12,
            "train accuracy {}",
            report.accuracy
        );
    }

    #[test]
    fn evaluate_single_label_corpus_is_perfect() {
        let labels = LabelSet::from_names(["only"]);
        let convs = vec![Conversation {
            id: "c0".into(),
            utterances: vec![utt(&["hello"], "only"), utt(&["there"], "only")],
        }];
        let vocab = build_vocab(&convs, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shape = ModelShape {
            context: 1,
            max_len: 3,
            dropout: 0.0,
            widths: vec![2],
            filters_per_width: 2,
            dim: 4,
            head: HeadKind::Crf,
        };
        let model = Model::new(vocab, labels, shape, None, &mut rng).unwrap();
        let ckpt = Checkpoint {
            model,
            config: tiny_config(),
            epoch: 0,
            valid_accuracy: 0.0,
            seed: 0,
        };
        let report = evaluate(&ckpt, &convs).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.n_utterances, 2);
    }

    #[test]
    fn confusion_row_sums_match_gold_counts() {
        let split = separable_split(8, 5);
        let mut config = tiny_config();
        config.max_epochs = 2;
        let fitted = fit(&split, &config, None).unwrap();
        let report = evaluate(&fitted.best().checkpoint, &split.test).unwrap();
        // oracle: count gold labels directly
        let mut gold_counts = vec![0usize; 2];
        for conv in &split.test {
            for u in &conv.utterances {
                let idx = split.labels.index_of(u.label.as_ref().unwrap()).unwrap();
                gold_counts[idx] += 1;
            }
        }
        for k in 0..2 {
            let row_sum: f64 = (0..2).map(|p| report.confusion.get(k, p)).sum();
            assert_eq!(row_sum as usize, gold_counts[k]);
            assert_eq!(report.per_class[k].support, gold_counts[k]);
        }
        let total: f64 = report.confusion.as_slice().iter().sum();
        assert_eq!(total as usize, report.n_utterances);
    }

    #[test]
    fn evaluate_rejects_unknown_labels() {
        let split = separable_split(6, 4);
        let mut config = tiny_config();
        config.max_epochs = 1;
        let fitted = fit(&split, &config, None).unwrap();
        let alien = vec![Conversation {
            id: "x".into(),
            utterances: vec![utt(&["hm"], "C")],
        }];
        let err = evaluate(&fitted.best().checkpoint, &alien).unwrap_err();
        assert!(matches!(err, Error::LabelSetMismatch { .. }));
    }

    #[test]
    fn evaluation_is_side_effect_free() {
        let split = separable_split(6, 4);
        let mut config = tiny_config();
        config.max_epochs = 2;
        let fitted = fit(&split, &config, None).unwrap();
        let ckpt = &fitted.best().checkpoint;
        let before = ckpt.to_bytes();
        let vocab = &ckpt.model.vocab;
        let probe = split_windows(&split.test, config.context, vocab, config.max_len, &split.labels);
        let preds_before: Vec<usize> = probe
            .iter()
            .map(|w| ckpt.model.predict_label(w).unwrap())
            .collect();
        evaluate(ckpt, &split.test).unwrap();
        let preds_after: Vec<usize> = probe
            .iter()
            .map(|w| ckpt.model.predict_label(w).unwrap())
            .collect();
        assert_eq!(preds_before, preds_after);
        assert_eq!(before, ckpt.to_bytes());
    }

    #[test]
    fn one_by_one_grid_equals_direct_fit_and_evaluate() {
        let split = separable_split(8, 5);
        let mut config = tiny_config();
        config.max_epochs = 3;
        let variant = MatrixVariant {
            name: "clean".into(),
            split: split.clone(),
        };
        let grid = run_matrix_loaded(
            std::slice::from_ref(&variant),
            std::slice::from_ref(&variant),
            &config,
            None,
        )
        .unwrap();
        let direct_fit = fit(&split, &config, None).unwrap();
        let direct = evaluate(&direct_fit.runs[0].checkpoint, &split.test).unwrap();
        assert_eq!(grid.cells.len(), 1);
        assert_eq!(grid.cells[0].len(), 1);
        assert!((grid.cells[0][0].accuracy - direct.accuracy).abs() < 1e-12);
        assert_eq!(grid.cells[0][0].confusion, direct.confusion);
    }

    #[test]
    fn two_by_three_grid_has_six_cells() {
        let split = separable_split(8, 5);
        let mut config = tiny_config();
        config.max_epochs = 1;
        let v = |name: &str| MatrixVariant {
            name: name.into(),
            split: split.clone(),
        };
        let grid = run_matrix_loaded(
            &[v("t1"), v("t2")],
            &[v("e1"), v("e2"), v("e3")],
            &config,
            None,
        )
        .unwrap();
        assert_eq!(grid.cells.iter().map(|r| r.len()).sum::<usize>(), 6);
        let rendered = grid.render();
        assert!(rendered.contains("t1") && rendered.contains("e3"));
    }

    #[test]
    fn matrix_rejects_label_set_disagreement() {
        let split = separable_split(6, 4);
        let mut other = split.clone();
        other.labels = LabelSet::from_names(["A", "B", "C"]);
        let config = tiny_config();
        let err = run_matrix_loaded(
            &[MatrixVariant {
                name: "a".into(),
                split,
            }],
            &[MatrixVariant {
                name: "b".into(),
                split: other,
            }],
            &config,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::LabelSetMismatch { .. }));
    }

    #[test]
    fn matrix_errors_carry_cell_coordinates() {
        let split = separable_split(6, 4);
        let mut bad_test = split.clone();
        // an unlabeled test utterance trips evaluate inside the cell
        bad_test.test[0].utterances[0].label = None;
        let mut config = tiny_config();
        config.max_epochs = 1;
        let err = run_matrix_loaded(
            &[MatrixVariant {
                name: "clean".into(),
                split,
            }],
            &[MatrixVariant {
                name: "broken".into(),
                split: bad_test,
            }],
            &config,
            None,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("clean") && msg.contains("broken"), "{msg}");
        // the wrapped error keeps its data-error exit class
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn summary_average_within_min_max() {
        let s = SeedSummary::over(&[0.5, 0.7, 0.6]);
        assert!(s.min <= s.avg && s.avg <= s.max);
        assert!((s.avg - 0.6).abs() < 1e-12);
        assert_eq!(s.render(), "60.0 (50.0, 70.0)");
    }

    proptest! {
        #[test]
        fn accuracy_of_anything_with_itself_is_one(xs in proptest::collection::vec(0usize..10, 1..50)) {
            prop_assert_eq!(accuracy(&xs, &xs).unwrap(), 1.0);
        }

        #[test]
        fn majority_baseline_bounded(
            train in proptest::collection::vec(0usize..4, 1..40),
            test in proptest::collection::vec(0usize..4, 1..40),
        ) {
            let a = majority_baseline(&train, &test).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
