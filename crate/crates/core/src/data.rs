//! Dataset synthesis, SVMLight ingestion, feature partitioning across
//! clients, and mini-batch index sampling.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::rngstream::{child_stream, DOMAIN_DATA};
use crate::{Error, Result};

/// An `N x d` dataset stored as dense column blocks `X_1..X_K` plus labels.
///
/// A freshly loaded dataset has a single block; [`partition_even`] splits it
/// across clients.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    blocks: Vec<Matrix>,
    block_dims: Vec<usize>,
    labels: Vec<f64>,
    num_samples: usize,
    num_features: usize,
}

impl FeatureDataset {
    pub fn single_block(x: Matrix, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        let (n, d) = (x.rows(), x.cols());
        Ok(FeatureDataset {
            block_dims: vec![d],
            blocks: vec![x],
            labels,
            num_samples: n,
            num_features: d,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, k: usize) -> &Matrix {
        &self.blocks[k]
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Column-wise reassembly of all blocks.
    pub fn full_matrix(&self) -> Matrix {
        let parts: Vec<&Matrix> = self.blocks.iter().collect();
        Matrix::hcat(&parts).expect("blocks share the row count")
    }
}

/// Sorted, distinct sample indices of a mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices {
    indices: Vec<usize>,
    num_samples: usize,
}

impl BatchIndices {
    /// The full-batch identity set `{0..n}`.
    pub fn full(n: usize) -> Self {
        BatchIndices {
            indices: (0..n).collect(),
            num_samples: n,
        }
    }

    /// Explicit index set; must be strictly increasing and in range.
    pub fn from_sorted(indices: Vec<usize>, num_samples: usize) -> Result<Self> {
        if indices.is_empty() || indices.len() > num_samples {
            return Err(Error::BatchSize {
                batch: indices.len(),
                samples: num_samples,
            });
        }
        let in_range = indices.last().is_some_and(|&i| i < num_samples);
        let increasing = indices.windows(2).all(|w| w[0] < w[1]);
        if !in_range || !increasing {
            return Err(Error::InvalidInput(
                "batch indices must be strictly increasing and in range".into(),
            ));
        }
        Ok(BatchIndices {
            indices,
            num_samples,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.num_samples
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }
}

/// Draw `b` indices uniformly without replacement from `0..n`.
pub fn sample_batch(n: usize, b: usize, rng: &mut ChaCha8Rng) -> Result<BatchIndices> {
    if b == 0 || b > n {
        return Err(Error::BatchSize {
            batch: b,
            samples: n,
        });
    }
    if b == n {
        return Ok(BatchIndices::full(n));
    }
    // Partial Fisher-Yates over an index pool; first b slots are the sample.
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..b {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    let mut indices: Vec<usize> = pool[..b].to_vec();
    indices.sort_unstable();
    Ok(BatchIndices {
        indices,
        num_samples: n,
    })
}

/// Synthetic ridge data: design entries drawn uniformly from {0,1}, labels
/// from a standard normal, both i.i.d. and fully determined by the seed.
pub fn generate_synthetic_ridge(n: usize, d: usize, seed: u64) -> Result<FeatureDataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(
            "synthetic dataset needs n, d >= 1".into(),
        ));
    }
    let mut rng = child_stream(seed, DOMAIN_DATA, 0, 0);
    let mut x = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        x.push(rng.gen_range(0..2u8) as f64);
    }
    let labels = (0..n).map(|_| standard_normal(&mut rng)).collect();
    FeatureDataset::single_block(Matrix::from_vec(n, d, x)?, labels)
}

/// One standard-normal draw via Box-Muller (cosine branch only, so the draw
/// sequence stays stable).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let u = rng.gen::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// How to interpret labels while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMap {
    /// Keep labels as parsed (regression).
    Raw,
    /// Classification: map -1 to 0, +1 to 1; 0/1 pass through.
    Binary,
}

/// Load a dense dataset from SVMLight text: `label idx:val idx:val ...` per
/// line with 1-based, strictly increasing indices; `#` starts a comment.
pub fn load_svmlight<P: AsRef<Path>>(
    path: P,
    expected_features: Option<usize>,
    map: LabelMap,
) -> Result<FeatureDataset> {
    let display = path.as_ref().display().to_string();
    let file = File::open(path.as_ref())?;
    parse_svmlight(BufReader::new(file), &display, expected_features, map)
}

/// Parser backing [`load_svmlight`]; exposed for in-memory sources.
pub fn parse_svmlight<R: BufRead>(
    reader: R,
    source: &str,
    expected_features: Option<usize>,
    map: LabelMap,
) -> Result<FeatureDataset> {
    let fail = |line: usize, reason: String| Error::SvmlightParse {
        path: source.to_string(),
        line,
        reason,
    };
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label_tok = tokens.next().expect("nonempty body has a first token");
        let raw: f64 = label_tok
            .parse()
            .map_err(|_| fail(lineno, format!("non-numeric label '{label_tok}'")))?;
        let label = match map {
            LabelMap::Raw => raw,
            LabelMap::Binary => {
                if raw == -1.0 || raw == 0.0 {
                    0.0
                } else if raw == 1.0 {
                    1.0
                } else {
                    return Err(fail(lineno, format!("label {raw} is not in {{-1,0,+1}}")));
                }
            }
        };
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut last_index = 0usize;
        for tok in tokens {
            let (idx_str, val_str) = tok
                .split_once(':')
                .ok_or_else(|| fail(lineno, format!("malformed pair '{tok}'")))?;
            let idx: usize = idx_str
                .parse()
                .map_err(|_| fail(lineno, format!("non-numeric index '{idx_str}'")))?;
            let val: f64 = val_str
                .parse()
                .map_err(|_| fail(lineno, format!("non-numeric value '{val_str}'")))?;
            if idx == 0 {
                return Err(fail(lineno, "indices are 1-based".into()));
            }
            if idx <= last_index {
                return Err(fail(
                    lineno,
                    format!("indices must be strictly increasing, saw {idx} after {last_index}"),
                ));
            }
            if let Some(d) = expected_features {
                if idx > d {
                    return Err(fail(lineno, format!("index {idx} exceeds {d} features")));
                }
            }
            last_index = idx;
            entries.push((idx, val));
        }
        max_index = max_index.max(last_index);
        labels.push(label);
        rows.push(entries);
    }
    let d = expected_features.unwrap_or(max_index);
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidInput(format!("{source}: no samples")));
    }
    let mut x = Matrix::zeros(n, d);
    for (i, entries) in rows.iter().enumerate() {
        for &(idx, val) in entries {
            x.set(i, idx - 1, val);
        }
    }
    FeatureDataset::single_block(x, labels)
}

/// Write in SVMLight text form (only nonzero entries, 17 significant digits,
/// so a reload reproduces the values exactly).
pub fn write_svmlight<W: Write>(ds: &FeatureDataset, w: &mut W) -> std::io::Result<()> {
    let x = ds.full_matrix();
    for i in 0..ds.num_samples() {
        write!(w, "{:.16e}", ds.labels()[i])?;
        for (j, &v) in x.row(i).iter().enumerate() {
            if v != 0.0 {
                write!(w, " {}:{:.16e}", j + 1, v)?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Split the dataset into `k` contiguous column blocks; the first `d mod k`
/// clients receive the extra column. Reassembling the blocks column-wise
/// reproduces the original matrix exactly.
pub fn partition_even(ds: &FeatureDataset, k: usize) -> Result<FeatureDataset> {
    let d = ds.num_features();
    if k == 0 || k > d {
        return Err(Error::PartitionTooFine {
            features: d,
            clients: k,
        });
    }
    let full = ds.full_matrix();
    let base = d / k;
    let extra = d % k;
    let mut blocks = Vec::with_capacity(k);
    let mut block_dims = Vec::with_capacity(k);
    let mut lo = 0usize;
    for c in 0..k {
        let width = base + usize::from(c < extra);
        blocks.push(full.select_cols(lo, lo + width)?);
        block_dims.push(width);
        lo += width;
    }
    Ok(FeatureDataset {
        blocks,
        block_dims,
        labels: ds.labels.clone(),
        num_samples: ds.num_samples,
        num_features: d,
    })
}

/// Per-feature min-max scaling onto [-1, 1]; constant features map to 0.
pub fn scale_minmax(ds: &FeatureDataset) -> FeatureDataset {
    let mut full = ds.full_matrix();
    let (n, d) = (full.rows(), full.cols());
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            lo = lo.min(full.get(i, j));
            hi = hi.max(full.get(i, j));
        }
        let span = hi - lo;
        for i in 0..n {
            let v = if span == 0.0 {
                0.0
            } else {
                -1.0 + 2.0 * (full.get(i, j) - lo) / span
            };
            full.set(i, j, v);
        }
    }
    FeatureDataset {
        block_dims: vec![d],
        blocks: vec![full],
        labels: ds.labels.clone(),
        num_samples: n,
        num_features: d,
    }
}
