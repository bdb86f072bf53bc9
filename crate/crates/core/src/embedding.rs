//! Embedding datasets: the in-memory matrix, its per-row manifest, the EMB1
//! byte layout, and the seeded train/validation split.
//!
//! EMB1 is little-endian throughout:
//!
//! | bytes  | field                       |
//! |--------|-----------------------------|
//! | 0..4   | magic `b"EMB1"`             |
//! | 4..8   | format version, `u32` = 1   |
//! | 8..16  | sample count `n`, `u64`     |
//! | 16..20 | dimension `d`, `u32`        |
//! | 20..   | `n·d` binary32 values, row-major |

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, shape_err, Error, FormatError, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const EMB1_VERSION: u32 = 1;
pub const EMB1_HEADER_LEN: usize = 20;
/// Width of the frozen audio encoder's output.
pub const EMBEDDING_DIM: usize = 1024;

/// `n × d` matrix of finite binary32 embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 {
            return Err(invalid_arg!("embedding matrix needs at least one row"));
        }
        if dim == 0 {
            return Err(invalid_arg!("embedding dimension must be positive"));
        }
        if data.len() != rows * dim {
            return Err(shape_err!(
                "{} values for {rows} rows of width {dim}",
                data.len()
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!(
                "embedding row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::new(
            m.rows(),
            m.cols(),
            m.as_slice().iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Widens to `f64` for the numeric code.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.dim,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("dimensions are consistent by construction")
    }

    /// Rows `indices` widened to `f64`.
    pub fn select(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend(self.row(i).iter().map(|&v| f64::from(v)));
        }
        Matrix::from_vec(indices.len(), self.dim, data).expect("consistent dimensions")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub source_path: String,
    pub duration_seconds: f64,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source_path: String::new(),
            duration_seconds: 0.0,
            tags: BTreeMap::new(),
        }
    }
}

/// Row-ordered metadata for an [`EmbeddingMatrix`]. Serializes as a bare JSON
/// array.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SampleManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries named `row-0`, `row-1`, ...
    pub fn numbered(n: usize) -> Self {
        Self {
            entries: (0..n)
                .map(|i| ManifestEntry::new(alloc::format!("row-{i}")))
                .collect(),
        }
    }

    pub fn validate_against(&self, matrix: &EmbeddingMatrix) -> Result<()> {
        if self.len() != matrix.rows() {
            return Err(shape_err!(
                "manifest has {} entries but the matrix has {} rows",
                self.len(),
                matrix.rows()
            ));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(invalid_arg!("duplicate manifest id {:?}", e.id));
            }
            if !(e.duration_seconds >= 0.0 && e.duration_seconds.is_finite()) {
                return Err(invalid_arg!(
                    "manifest entry {:?} has invalid duration {}",
                    e.id,
                    e.duration_seconds
                ));
            }
        }
        Ok(())
    }
}

/// Serializes a matrix into EMB1 bytes.
pub fn encode_emb1(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(EMB1_HEADER_LEN + 4 * matrix.data.len());
    out.extend_from_slice(&EMB1_MAGIC);
    out.extend_from_slice(&EMB1_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.rows as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    for v in &matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses EMB1 bytes, rejecting malformed headers, size disagreements and
/// non-finite payload values.
pub fn decode_emb1(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() >= 4 && bytes[..4] != EMB1_MAGIC {
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        return Err(FormatError::BadMagic(magic).into());
    }
    if bytes.len() < EMB1_HEADER_LEN {
        return Err(FormatError::TruncatedHeader(bytes.len()).into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != EMB1_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u32_at(16);
    if dim == 0 {
        return Err(FormatError::ZeroDimension.into());
    }
    if count == 0 {
        return Err(FormatError::ZeroCount.into());
    }
    let expected = count
        .checked_mul(u64::from(dim))
        .and_then(|v| v.checked_mul(4))
        .filter(|&v| usize::try_from(v).is_ok())
        .ok_or(FormatError::SizeOverflow)?;
    let actual = (bytes.len() - EMB1_HEADER_LEN) as u64;
    if actual < expected {
        return Err(FormatError::Truncated { expected, actual }.into());
    }
    if actual > expected {
        return Err(FormatError::TrailingBytes { expected, actual }.into());
    }
    let data = bytes[EMB1_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(count as usize, dim as usize, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train_indices.len() + self.val_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the partition property against a dataset of `n` rows.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut all: Vec<usize> = self
            .train_indices
            .iter()
            .chain(&self.val_indices)
            .copied()
            .collect();
        all.sort_unstable();
        if all.len() != n || all.iter().enumerate().any(|(i, &v)| i != v) {
            return Err(invalid_arg!(
                "split does not partition the {n} dataset rows exactly once"
            ));
        }
        Ok(())
    }
}

/// Seeded Fisher-Yates permutation of `0..n`, cut at `floor(ratio·n)`.
pub fn split_dataset(n: usize, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if n < 2 {
        return Err(invalid_arg!("cannot split {n} rows, need at least 2"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid_arg!("split ratio {ratio} outside (0, 1)"));
    }
    let n_train = libm::floor(ratio * n as f64) as usize;
    if n_train == 0 || n_train == n {
        return Err(invalid_arg!(
            "ratio {ratio} on {n} rows leaves one side of the split empty"
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let val_indices = order.split_off(n_train);
    Ok(DatasetSplit {
        train_indices: order,
        val_indices,
        seed,
        ratio,
    })
}
