//! Score projection and exact linear-chain CRF: log-partition by the
//! forward recursion, forward-backward marginals, NLL gradients, Viterbi
//! decoding, and the softmax head used by the context-0 baseline.
//!
//! All dynamic programs run in log space with max-shifted log-sum-exp, so
//! score magnitudes up to about 1e3 are safe.

use rand::Rng;

use crate::encoder::PooledVector;
use crate::error::{Error, Result};
use crate::math::{argmax_first, check_finite, logsumexp, Mat};

/// Shared linear layer s = W p + b, one (W, b) for every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreProjection {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl ScoreProjection {
    pub fn new<R: Rng>(num_labels: usize, p_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (num_labels + p_dim) as f64).sqrt();
        let mut w = Mat::zeros(num_labels, p_dim);
        for v in w.as_mut_slice() {
            *v = rng.gen_range(-limit..=limit);
        }
        ScoreProjection {
            w,
            b: vec![0.0; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.w.rows()
    }

    pub fn p_dim(&self) -> usize {
        self.w.cols()
    }
}

/// Adjacent-label scores: t[i][j] scores label j following label i, plus a
/// start vector for the first position. Initialized to zeros; every
/// transition stays permitted.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionParams {
    pub t: Mat,
    pub start: Vec<f64>,
}

impl TransitionParams {
    pub fn new(num_labels: usize) -> Self {
        TransitionParams {
            t: Mat::zeros(num_labels, num_labels),
            start: vec![0.0; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.t.rows()
    }
}

/// Per-slot label scores for one window, with the window's pad mask.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScores {
    /// L x C, row t = scores of slot t.
    pub s: Mat,
    pub pad_mask: Vec<bool>,
}

impl WindowScores {
    /// Index of the first real slot. Errors when the whole window is padding.
    pub fn first_real_slot(&self) -> Result<usize> {
        let first = self.pad_mask.iter().position(|p| !p).ok_or(Error::EmptyInput {
            context: "all window slots are padding",
        })?;
        debug_assert!(
            self.pad_mask[first..].iter().all(|&p| !p),
            "padding must be a contiguous prefix"
        );
        Ok(first)
    }

    /// Score matrix restricted to the non-padded suffix.
    pub fn real(&self) -> Result<Mat> {
        let first = self.first_real_slot()?;
        let len = self.s.rows() - first;
        let mut out = Mat::zeros(len, self.s.cols());
        for t in 0..len {
            out.row_mut(t).copy_from_slice(self.s.row(first + t));
        }
        Ok(out)
    }
}

/// Apply the projection to every slot: S[t] = W p_t + b.
pub fn project_scores(
    p_vectors: &[PooledVector],
    proj: &ScoreProjection,
    pad_mask: &[bool],
) -> Result<WindowScores> {
    let c = proj.num_labels();
    let p_dim = proj.p_dim();
    let mut s = Mat::zeros(p_vectors.len(), c);
    for (t, pv) in p_vectors.iter().enumerate() {
        if pv.p.len() != p_dim {
            return Err(Error::ShapeMismatch {
                context: "pooled vector vs projection width",
                expected: p_dim,
                found: pv.p.len(),
            });
        }
        for k in 0..c {
            let row = proj.w.row(k);
            let mut acc = proj.b[k];
            for (wv, pvj) in row.iter().zip(&pv.p) {
                acc += wv * pvj;
            }
            s.set(t, k, acc);
        }
    }
    Ok(WindowScores {
        s,
        pad_mask: pad_mask.to_vec(),
    })
}

/// Backward of project_scores: route dL/dS into (dW, db) and per-slot dp.
pub fn project_backward(
    ds: &Mat,
    p_vectors: &[PooledVector],
    proj: &ScoreProjection,
) -> Result<(Mat, Vec<f64>, Vec<Vec<f64>>)> {
    let c = proj.num_labels();
    let p_dim = proj.p_dim();
    if ds.rows() != p_vectors.len() || ds.cols() != c {
        return Err(Error::ShapeMismatch {
            context: "score gradient shape",
            expected: p_vectors.len() * c,
            found: ds.rows() * ds.cols(),
        });
    }
    let mut dw = Mat::zeros(c, p_dim);
    let mut db = vec![0.0; c];
    let mut dps = vec![vec![0.0; p_dim]; p_vectors.len()];
    for (t, pv) in p_vectors.iter().enumerate() {
        for k in 0..c {
            let g = ds.get(t, k);
            if g == 0.0 {
                continue;
            }
            db[k] += g;
            let wrow = proj.w.row(k);
            let dwrow = dw.row_mut(k);
            for j in 0..p_dim {
                dwrow[j] += g * pv.p[j];
                dps[t][j] += g * wrow[j];
            }
        }
    }
    Ok((dw, db, dps))
}

fn validate_chain(s: &Mat, trans: &TransitionParams) -> Result<()> {
    if s.rows() == 0 {
        return Err(Error::EmptyInput {
            context: "empty score sequence",
        });
    }
    if s.cols() != trans.num_labels() || trans.start.len() != trans.num_labels() {
        return Err(Error::ShapeMismatch {
            context: "label count vs transition shape",
            expected: trans.num_labels(),
            found: s.cols(),
        });
    }
    check_finite(s.as_slice(), "emission scores")?;
    check_finite(trans.t.as_slice(), "transition scores")?;
    check_finite(&trans.start, "start scores")?;
    Ok(())
}

fn forward_alphas(s: &Mat, trans: &TransitionParams) -> Mat {
    let (l, c) = (s.rows(), s.cols());
    let mut alpha = Mat::zeros(l, c);
    for k in 0..c {
        alpha.set(0, k, trans.start[k] + s.get(0, k));
    }
    let mut scratch = vec![0.0; c];
    for t in 1..l {
        for j in 0..c {
            for (i, sc) in scratch.iter_mut().enumerate() {
                *sc = alpha.get(t - 1, i) + trans.t.get(i, j);
            }
            alpha.set(t, j, s.get(t, j) + logsumexp(&scratch));
        }
    }
    alpha
}

fn backward_betas(s: &Mat, trans: &TransitionParams) -> Mat {
    let (l, c) = (s.rows(), s.cols());
    let mut beta = Mat::zeros(l, c);
    let mut scratch = vec![0.0; c];
    for t in (0..l.saturating_sub(1)).rev() {
        for i in 0..c {
            for (j, sc) in scratch.iter_mut().enumerate() {
                *sc = trans.t.get(i, j) + s.get(t + 1, j) + beta.get(t + 1, j);
            }
            beta.set(t, i, logsumexp(&scratch));
        }
    }
    beta
}

/// log Z over all C^L label sequences, by the forward recursion.
pub fn log_partition(s: &Mat, trans: &TransitionParams) -> Result<f64> {
    validate_chain(s, trans)?;
    let alpha = forward_alphas(s, trans);
    Ok(logsumexp(alpha.row(alpha.rows() - 1)))
}

/// Unnormalized log score of one label sequence:
/// start[y0] + sum_t S[t][y_t] + sum_{t>=1} T[y_{t-1}][y_t].
pub fn sequence_score(s: &Mat, trans: &TransitionParams, labels: &[usize]) -> Result<f64> {
    validate_chain(s, trans)?;
    if labels.len() != s.rows() {
        return Err(Error::ShapeMismatch {
            context: "label sequence length",
            expected: s.rows(),
            found: labels.len(),
        });
    }
    let c = s.cols();
    for &y in labels {
        if y >= c {
            return Err(Error::ShapeMismatch {
                context: "gold label index",
                expected: c,
                found: y,
            });
        }
    }
    let mut score = trans.start[labels[0]] + s.get(0, labels[0]);
    for t in 1..labels.len() {
        score += trans.t.get(labels[t - 1], labels[t]) + s.get(t, labels[t]);
    }
    Ok(score)
}

/// Negative log-likelihood of the gold labels, over the non-padded suffix of
/// the window only.
pub fn nll(scores: &WindowScores, trans: &TransitionParams, gold: &[usize]) -> Result<f64> {
    if gold.len() != scores.s.rows() {
        return Err(Error::ShapeMismatch {
            context: "gold length vs window slots",
            expected: scores.s.rows(),
            found: gold.len(),
        });
    }
    let first = scores.first_real_slot()?;
    let s = scores.real()?;
    let gold_real = &gold[first..];
    let log_z = log_partition(&s, trans)?;
    let score = sequence_score(&s, trans, gold_real)?;
    Ok(log_z - score)
}

/// Exact posterior marginals by forward-backward, in log space.
/// unary is L x C; pairwise has L-1 entries, each C x C.
pub fn marginals(s: &Mat, trans: &TransitionParams) -> Result<(Mat, Vec<Mat>)> {
    validate_chain(s, trans)?;
    let (l, c) = (s.rows(), s.cols());
    let alpha = forward_alphas(s, trans);
    let beta = backward_betas(s, trans);
    let log_z = logsumexp(alpha.row(l - 1));
    let mut unary = Mat::zeros(l, c);
    for t in 0..l {
        for k in 0..c {
            unary.set(t, k, (alpha.get(t, k) + beta.get(t, k) - log_z).exp());
        }
    }
    let mut pairwise = Vec::with_capacity(l.saturating_sub(1));
    for t in 0..l.saturating_sub(1) {
        let mut pw = Mat::zeros(c, c);
        for i in 0..c {
            for j in 0..c {
                let lp = alpha.get(t, i)
                    + trans.t.get(i, j)
                    + s.get(t + 1, j)
                    + beta.get(t + 1, j)
                    - log_z;
                pw.set(i, j, lp.exp());
            }
        }
        pairwise.push(pw);
    }
    Ok((unary, pairwise))
}

/// Gradients of nll: expected minus observed sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGrads {
    /// Over the FULL window; padded rows stay zero.
    pub ds: Mat,
    pub dt: Mat,
    pub dstart: Vec<f64>,
}

pub fn crf_backward(
    scores: &WindowScores,
    trans: &TransitionParams,
    gold: &[usize],
) -> Result<CrfGrads> {
    if gold.len() != scores.s.rows() {
        return Err(Error::ShapeMismatch {
            context: "gold length vs window slots",
            expected: scores.s.rows(),
            found: gold.len(),
        });
    }
    let first = scores.first_real_slot()?;
    let s = scores.real()?;
    let gold_real = &gold[first..];
    let c = s.cols();
    for &y in gold_real {
        if y >= c {
            return Err(Error::ShapeMismatch {
                context: "gold label index",
                expected: c,
                found: y,
            });
        }
    }
    let (unary, pairwise) = marginals(&s, trans)?;
    let mut ds = Mat::zeros(scores.s.rows(), c);
    for t in 0..s.rows() {
        for k in 0..c {
            let observed = if gold_real[t] == k { 1.0 } else { 0.0 };
            ds.set(first + t, k, unary.get(t, k) - observed);
        }
    }
    let mut dt = Mat::zeros(c, c);
    for (t, pw) in pairwise.iter().enumerate() {
        for i in 0..c {
            for j in 0..c {
                dt.add_at(i, j, pw.get(i, j));
            }
        }
        dt.add_at(gold_real[t], gold_real[t + 1], -1.0);
    }
    let mut dstart = vec![0.0; c];
    for k in 0..c {
        dstart[k] = unary.get(0, k) - if gold_real[0] == k { 1.0 } else { 0.0 };
    }
    Ok(CrfGrads { ds, dt, dstart })
}

/// Max-product decoding: the highest-scoring label sequence and its score.
/// Ties break to the lowest label index at every step.
pub fn viterbi(s: &Mat, trans: &TransitionParams) -> Result<(Vec<usize>, f64)> {
    validate_chain(s, trans)?;
    let (l, c) = (s.rows(), s.cols());
    let mut delta = Mat::zeros(l, c);
    let mut back: Vec<Vec<usize>> = vec![vec![0; c]; l];
    for k in 0..c {
        delta.set(0, k, trans.start[k] + s.get(0, k));
    }
    let mut scratch = vec![0.0; c];
    for t in 1..l {
        for j in 0..c {
            for (i, sc) in scratch.iter_mut().enumerate() {
                *sc = delta.get(t - 1, i) + trans.t.get(i, j);
            }
            let best = argmax_first(&scratch);
            back[t][j] = best;
            delta.set(t, j, s.get(t, j) + scratch[best]);
        }
    }
    let mut path = vec![0; l];
    path[l - 1] = argmax_first(delta.row(l - 1));
    let score = delta.get(l - 1, path[l - 1]);
    for t in (0..l - 1).rev() {
        path[t] = back[t + 1][path[t + 1]];
    }
    Ok((path, score))
}

/// Cross-entropy softmax head for the context-0 baseline.
pub fn softmax_baseline(
    p: &PooledVector,
    proj: &ScoreProjection,
    gold: usize,
) -> Result<(f64, usize)> {
    let scores = project_scores(
        std::slice::from_ref(p),
        proj,
        &[false],
    )?;
    let row = scores.s.row(0);
    check_finite(row, "softmax scores")?;
    if gold >= row.len() {
        return Err(Error::ShapeMismatch {
            context: "gold label index",
            expected: row.len(),
            found: gold,
        });
    }
    let log_z = logsumexp(row);
    Ok((log_z - row[gold], argmax_first(row)))
}

/// d softmax-CE / d scores: softmax(s) - onehot(gold).
pub fn softmax_backward(scores: &[f64], gold: usize) -> Vec<f64> {
    let log_z = logsumexp(scores);
    scores
        .iter()
        .enumerate()
        .map(|(k, &v)| (v - log_z).exp() - if k == gold { 1.0 } else { 0.0 })
        .collect()
}
