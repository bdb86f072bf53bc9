//! Isolation Forest with axis-parallel random splits.

use alloc::boxed::Box;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, shape_err, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

const EULER_GAMMA: f64 = 0.577_215_664_9;

/// Average unsuccessful-search path length in a binary search tree of `n`
/// nodes, the normalizer of isolation depths.
pub fn avg_path_c(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * (libm::log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolationForestConfig {
    pub n_trees: usize,
    pub subsample_size: usize,
    pub seed: u64,
}

impl Default for IsolationForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ITreeNode {
    Internal {
        split_dim: usize,
        split_value: f64,
        left: Box<ITreeNode>,
        right: Box<ITreeNode>,
    },
    Leaf {
        size: usize,
        depth: usize,
    },
}

impl ITreeNode {
    /// Depth reached by `x` plus the `c(size)` correction at its leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                ITreeNode::Internal {
                    split_dim,
                    split_value,
                    left,
                    right,
                } => {
                    node = if x[*split_dim] < *split_value {
                        left
                    } else {
                        right
                    };
                }
                ITreeNode::Leaf { size, depth } => return *depth as f64 + avg_path_c(*size),
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ITreeNode::Internal { left, right, .. } => left.depth().max(right.depth()),
            ITreeNode::Leaf { depth, .. } => *depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest {
    pub trees: Vec<ITreeNode>,
    pub config: IsolationForestConfig,
    /// Rows each tree was grown on: `min(n, subsample_size)`.
    pub sample_size: usize,
    pub max_depth: usize,
    pub dim: usize,
}

struct Builder<'a> {
    data: &'a Matrix,
    max_depth: usize,
    rng: Rng,
}

impl Builder<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> ITreeNode {
        if depth >= self.max_depth || rows.len() <= 1 {
            return ITreeNode::Leaf {
                size: rows.len(),
                depth,
            };
        }
        let d = self.data.cols();
        let mut spread: Vec<(usize, f64, f64)> = Vec::new();
        for j in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &r in rows.iter() {
                let v = self.data[(r, j)];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi > lo {
                spread.push((j, lo, hi));
            }
        }
        if spread.is_empty() {
            return ITreeNode::Leaf {
                size: rows.len(),
                depth,
            };
        }
        // uniform over dimensions that can actually separate this node
        let (split_dim, lo, hi) = spread[self.rng.below(spread.len())];
        let mut split_value = lo + self.rng.next_open_f64() * (hi - lo);
        if !(split_value > lo && split_value < hi) {
            split_value = lo + 0.5 * (hi - lo);
        }
        if !(split_value > lo && split_value < hi) {
            // adjacent floats: the upper one still separates
            split_value = hi;
        }
        let mut cut = 0;
        for i in 0..rows.len() {
            if self.data[(rows[i], split_dim)] < split_value {
                rows.swap(i, cut);
                cut += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(cut);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        ITreeNode::Internal {
            split_dim,
            split_value,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

impl IsolationForest {
    pub fn fit(data: &Matrix, cfg: &IsolationForestConfig) -> Result<Self> {
        let n = data.rows();
        if n < 2 {
            return Err(invalid_arg!("isolation forest needs at least 2 rows"));
        }
        if cfg.n_trees == 0 {
            return Err(invalid_arg!("isolation forest needs at least one tree"));
        }
        if cfg.subsample_size < 2 {
            return Err(invalid_arg!("subsample size must be at least 2"));
        }
        if !data.is_finite() {
            return Err(invalid_arg!("isolation forest input has non-finite values"));
        }
        let sample_size = cfg.subsample_size.min(n);
        let max_depth = libm::ceil(libm::log2(cfg.subsample_size as f64)) as usize;
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut rng = Rng::derive(cfg.seed, t as u64);
                // partial Fisher-Yates: the first `sample_size` slots
                let mut rows: Vec<usize> = (0..n).collect();
                for i in 0..sample_size {
                    let j = i + rng.below(n - i);
                    rows.swap(i, j);
                }
                rows.truncate(sample_size);
                let mut builder = Builder {
                    data,
                    max_depth,
                    rng,
                };
                builder.grow(&mut rows, 0)
            })
            .collect();
        Ok(Self {
            trees,
            config: *cfg,
            sample_size,
            max_depth,
            dim: data.cols(),
        })
    }

    /// Mean path length `E(h)` over the trees.
    pub fn mean_path_length(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(shape_err!("forest expects width {}, got {}", self.dim, x.len()));
        }
        let total: f64 = self.trees.iter().map(|t| t.path_length(x)).sum();
        Ok(total / self.trees.len() as f64)
    }

    /// `2^(−E(h) / c(ψ))`; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(score_from_path(self.mean_path_length(x)?, self.sample_size))
    }

    pub fn score_rows(&self, data: &Matrix) -> Result<Vec<f64>> {
        data.iter_rows().map(|r| self.score(r)).collect()
    }
}

pub fn score_from_path(mean_path: f64, sample_size: usize) -> f64 {
    libm::exp2(-mean_path / avg_path_c(sample_size))
}
