//! Trainable word-embedding table: pretrained-vector loading, grid lookup,
//! and sparse per-row gradient application.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::corpus::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::math::Mat;

/// |V| x d matrix of word vectors. Row 0 (PAD) is all zeros and must stay
/// zero under training updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Mat,
    pub trainable: bool,
}

/// How much of the vocabulary was found in a pretrained file. Reserved
/// PAD/UNK rows are excluded from both counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverage {
    pub found: usize,
    pub total: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.found as f64 / self.total as f64
        }
    }
}

impl std::fmt::Display for Coverage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.found, self.total)
    }
}

impl EmbeddingTable {
    /// Uniform random init in [-0.25, 0.25] for all non-PAD rows.
    pub fn random<R: Rng>(vocab_size: usize, d: usize, rng: &mut R) -> Self {
        let mut matrix = Mat::zeros(vocab_size, d);
        for r in 1..vocab_size {
            for c in 0..d {
                matrix.set(r, c, rng.gen_range(-0.25..=0.25));
            }
        }
        EmbeddingTable {
            matrix,
            trainable: true,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Re-zero the PAD row. Cheap, called after any bulk mutation.
    pub fn clamp_pad(&mut self) {
        self.matrix.row_mut(PAD_ID).fill(0.0);
    }

    /// Apply a list of (row id, gradient) entries. Entries sharing a row are
    /// summed first, then each touched row gets exactly one `update` call
    /// (ascending row order, so optimizer state evolves deterministically).
    /// The PAD row is clamped back to zero afterward.
    pub fn apply_sparse_grad<F>(&mut self, entries: &[(usize, Vec<f64>)], mut update: F) -> Result<()>
    where
        F: FnMut(usize, &mut [f64], &[f64]) -> Result<()>,
    {
        if !self.trainable {
            return Err(Error::FrozenEmbedding);
        }
        let d = self.dim();
        let mut summed: std::collections::BTreeMap<usize, Vec<f64>> =
            std::collections::BTreeMap::new();
        for (id, grad) in entries {
            if *id >= self.vocab_size() {
                return Err(Error::TokenIdOutOfRange {
                    id: *id,
                    size: self.vocab_size(),
                });
            }
            if grad.len() != d {
                return Err(Error::ShapeMismatch {
                    context: "sparse embedding gradient",
                    expected: d,
                    found: grad.len(),
                });
            }
            let acc = summed.entry(*id).or_insert_with(|| vec![0.0; d]);
            for (a, g) in acc.iter_mut().zip(grad) {
                *a += g;
            }
        }
        for (id, grad) in &summed {
            update(*id, self.matrix.row_mut(*id), grad)?;
        }
        self.clamp_pad();
        Ok(())
    }
}

/// Gather the embedding columns for a token-id grid: output column j is the
/// table row for grid[j].
pub fn lookup(grid: &[usize], table: &EmbeddingTable) -> Result<Mat> {
    let d = table.dim();
    let mut out = Mat::zeros(d, grid.len());
    for (j, &id) in grid.iter().enumerate() {
        if id >= table.vocab_size() {
            return Err(Error::TokenIdOutOfRange {
                id,
                size: table.vocab_size(),
            });
        }
        let row = table.matrix.row(id);
        for i in 0..d {
            out.set(i, j, row[i]);
        }
    }
    Ok(out)
}

/// Load pretrained vectors from a text file: one token per line followed by
/// d decimals. An optional first header line "count dim" is skipped. Vocab
/// tokens absent from the file get uniform random init in [-0.25, 0.25].
pub fn load_pretrained<R: Rng>(
    path: &Path,
    vocab: &Vocabulary,
    d: usize,
    rng: &mut R,
) -> Result<(EmbeddingTable, Coverage)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut table = EmbeddingTable::random(vocab.len(), d, rng);
    let mut found = vec![false; vocab.len()];
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        // "count dim" header: two bare integers on the first line.
        if line_no == 1
            && fields.len() == 2
            && fields.iter().all(|f| f.parse::<u64>().is_ok())
        {
            continue;
        }
        if fields.len() != d + 1 {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: line_no,
                message: format!(
                    "embedding row has {} values, expected {d}",
                    fields.len().saturating_sub(1)
                ),
            });
        }
        let token = fields[0];
        let id = match vocab.contains(token) {
            true => vocab.id(token),
            false => continue,
        };
        if id == PAD_ID {
            continue;
        }
        for (c, field) in fields[1..].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("bad float {field:?}"),
            })?;
            table.matrix.set(id, c, v);
        }
        found[id] = true;
    }
    table.clamp_pad();
    let coverage = Coverage {
        // ids 0 and 1 are reserved; only real corpus tokens count.
        found: found.iter().skip(2).filter(|&&f| f).count(),
        total: vocab.len().saturating_sub(2),
    };
    Ok((table, coverage))
}
