//! CNN utterance encoder: full-depth convolution, ReLU, utterance-wise max
//! pooling, width-ordered concatenation, inverted dropout, and the exact
//! backward pass through all of it.

use rand::Rng;

use crate::corpus::{ContextWindow, PAD_ID};
use crate::embedding::{lookup, EmbeddingTable};
use crate::error::{Error, Result};
use crate::math::{argmax_first, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Filters of one width: `weights[i]` is a width x d grid, one bias each.
#[derive(Debug, Clone, PartialEq)]
pub struct WidthGroup {
    pub width: usize,
    pub weights: Vec<Mat>,
    pub biases: Vec<f64>,
}

/// The full filter bank, shared across all window slots. Feature order is
/// group order then filter index; that order fixes the layout of every
/// pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilterBank {
    pub groups: Vec<WidthGroup>,
    pub dim: usize,
}

impl ConvFilterBank {
    /// Glorot-style uniform init over each filter's receptive field; biases
    /// start at zero.
    pub fn new<R: Rng>(widths: &[usize], filters_per_width: usize, d: usize, rng: &mut R) -> Self {
        assert!(!widths.is_empty() && filters_per_width >= 1 && d >= 1);
        let groups = widths
            .iter()
            .map(|&width| {
                let limit = (6.0 / (width as f64 * d as f64 + 1.0)).sqrt();
                let weights = (0..filters_per_width)
                    .map(|_| {
                        let mut w = Mat::zeros(width, d);
                        for v in w.as_mut_slice() {
                            *v = rng.gen_range(-limit..=limit);
                        }
                        w
                    })
                    .collect();
                WidthGroup {
                    width,
                    weights,
                    biases: vec![0.0; filters_per_width],
                }
            })
            .collect();
        ConvFilterBank { groups, dim: d }
    }

    /// Same shapes, all zeros: a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let groups = self
            .groups
            .iter()
            .map(|g| WidthGroup {
                width: g.width,
                weights: g
                    .weights
                    .iter()
                    .map(|w| Mat::zeros(w.rows(), w.cols()))
                    .collect(),
                biases: vec![0.0; g.biases.len()],
            })
            .collect();
        ConvFilterBank {
            groups,
            dim: self.dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.groups
            .iter()
            .map(|g| g.weights.len() * (g.width * self.dim + 1))
            .sum()
    }

    /// Dimension of one pooled vector: total number of filters.
    pub fn p_dim(&self) -> usize {
        self.groups.iter().map(|g| g.weights.len()).sum()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.width).collect()
    }
}

/// One encoded slot: `p` is what downstream layers consume (post-dropout in
/// train mode); `argmax_cache` holds each feature's pooled position.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector {
    pub p: Vec<f64>,
    pub argmax_cache: Vec<usize>,
}

#[derive(Debug, Clone)]
struct GroupCache {
    padded_ids: Vec<usize>,
    emb: Mat,
    argmax: Vec<usize>,
    /// Pre-activation map value at the pooled position; the ReLU mask.
    preact: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SlotCache {
    groups: Vec<GroupCache>,
    /// Per-feature inverted-dropout scale: 0 or 1/(1-rate); 1 when off.
    dropout_scale: Vec<f64>,
}

/// Everything the backward pass needs from one encode_window call.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    slots: Vec<SlotCache>,
    p_dim: usize,
}

/// Full-depth valid cross-correlation: position k sums filter against the
/// width-long span of columns starting at k, over all d dims, plus bias.
/// Output length = L - width + 1. Callers pad; this does not.
pub fn convolve(emb: &Mat, filter: &Mat, bias: f64) -> Result<Vec<f64>> {
    let d = emb.rows();
    let len = emb.cols();
    let width = filter.rows();
    if filter.cols() != d {
        return Err(Error::ShapeMismatch {
            context: "filter depth vs embedding dim",
            expected: d,
            found: filter.cols(),
        });
    }
    if width > len {
        return Err(Error::ShapeMismatch {
            context: "filter width vs utterance length",
            expected: len,
            found: width,
        });
    }
    let mut map = vec![0.0; len - width + 1];
    for (k, out) in map.iter_mut().enumerate() {
        let mut acc = bias;
        for i in 0..width {
            let col = k + i;
            for j in 0..d {
                acc += filter.get(i, j) * emb.get(j, col);
            }
        }
        *out = acc;
    }
    Ok(map)
}

pub fn relu(map: &[f64]) -> Vec<f64> {
    map.iter().map(|&x| x.max(0.0)).collect()
}

/// Maximum activation over all positions and its first position.
pub fn max_pool_utterance(map: &[f64]) -> Result<(f64, usize)> {
    if map.is_empty() {
        return Err(Error::EmptyInput {
            context: "max pooling over empty feature map",
        });
    }
    let pos = argmax_first(map);
    Ok((map[pos], pos))
}

fn pad_grid(grid: &[usize], pad: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(grid.len() + 2 * pad);
    out.extend(std::iter::repeat(PAD_ID).take(pad));
    out.extend_from_slice(grid);
    out.extend(std::iter::repeat(PAD_ID).take(pad));
    out
}

/// Encode every slot of a window with the shared bank. Each slot's vector
/// concatenates pooled activations in width order. Train mode applies a
/// fresh inverted-dropout mask per slot; infer mode touches neither the
/// values nor the rng.
pub fn encode_window<R: Rng>(
    w: &ContextWindow,
    bank: &ConvFilterBank,
    table: &EmbeddingTable,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Vec<PooledVector>, EncodeCache)> {
    assert!((0.0..1.0).contains(&dropout_rate), "dropout must be in [0,1)");
    let p_dim = bank.p_dim();
    let mut pooled = Vec::with_capacity(w.slots());
    let mut cache = EncodeCache {
        slots: Vec::with_capacity(w.slots()),
        p_dim,
    };
    for grid in &w.grids {
        let mut p = Vec::with_capacity(p_dim);
        let mut argmaxes = Vec::with_capacity(p_dim);
        let mut groups = Vec::with_capacity(bank.groups.len());
        for group in &bank.groups {
            // Wide convolution: width-1 PAD columns each side so even a
            // one-token utterance yields a non-empty map.
            let padded_ids = pad_grid(grid, group.width - 1);
            let emb = lookup(&padded_ids, table)?;
            let mut gc = GroupCache {
                padded_ids,
                emb,
                argmax: Vec::with_capacity(group.weights.len()),
                preact: Vec::with_capacity(group.weights.len()),
            };
            for (filter, &bias) in group.weights.iter().zip(&group.biases) {
                let map = convolve(&gc.emb, filter, bias)?;
                let activated = relu(&map);
                let (value, pos) = max_pool_utterance(&activated)?;
                p.push(value);
                argmaxes.push(pos);
                gc.argmax.push(pos);
                gc.preact.push(map[pos]);
            }
            groups.push(gc);
        }
        let dropout_scale = if mode == Mode::Train && dropout_rate > 0.0 {
            let keep = 1.0 - dropout_rate;
            (0..p_dim)
                .map(|_| {
                    if rng.gen_range(0.0..1.0) < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            vec![1.0; p_dim]
        };
        for (v, s) in p.iter_mut().zip(&dropout_scale) {
            *v *= s;
        }
        pooled.push(PooledVector {
            p,
            argmax_cache: argmaxes,
        });
        cache.slots.push(SlotCache {
            groups,
            dropout_scale,
        });
    }
    Ok((pooled, cache))
}

/// Gradients produced by one encoder backward pass. Embedding entries are
/// (row id, d-vector), ascending by id.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub bank: ConvFilterBank,
    pub embedding: Vec<(usize, Vec<f64>)>,
}

/// Route upstream gradients on the pooled vectors back to filters, biases,
/// and the embedding rows inside each pooled argmax's span.
pub fn encoder_backward(
    upstream: &[Vec<f64>],
    cache: &EncodeCache,
    bank: &ConvFilterBank,
) -> Result<EncoderGrads> {
    if upstream.len() != cache.slots.len() {
        return Err(Error::ShapeMismatch {
            context: "encoder backward slot count",
            expected: cache.slots.len(),
            found: upstream.len(),
        });
    }
    let d = bank.dim;
    let mut grads = bank.zeros_like();
    let mut emb_grads: std::collections::BTreeMap<usize, Vec<f64>> =
        std::collections::BTreeMap::new();
    for (slot, up) in cache.slots.iter().zip(upstream) {
        if up.len() != cache.p_dim {
            return Err(Error::ShapeMismatch {
                context: "encoder backward feature count",
                expected: cache.p_dim,
                found: up.len(),
            });
        }
        let mut feat = 0usize;
        for (g, (group, gc)) in bank.groups.iter().zip(&slot.groups).enumerate() {
            for i in 0..group.weights.len() {
                let u = up[feat] * slot.dropout_scale[feat];
                feat += 1;
                // ReLU mask: the pooled max only passes gradient when its
                // pre-activation was positive.
                if u == 0.0 || gc.preact[i] <= 0.0 {
                    continue;
                }
                let pos = gc.argmax[i];
                grads.groups[g].biases[i] += u;
                let filter = &group.weights[i];
                let gfilter = &mut grads.groups[g].weights[i];
                for r in 0..group.width {
                    let col = pos + r;
                    for c in 0..d {
                        gfilter.add_at(r, c, u * gc.emb.get(c, col));
                    }
                    let id = gc.padded_ids[col];
                    let acc = emb_grads.entry(id).or_insert_with(|| vec![0.0; d]);
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += u * filter.get(r, c);
                    }
                }
            }
        }
    }
    Ok(EncoderGrads {
        bank: grads,
        embedding: emb_grads.into_iter().collect(),
    })
}
