//! Thresholding, labeling, 2-D projection, histograms, latent summaries and
//! box statistics for scored datasets. Everything here is a pure function of
//! its inputs.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, shape_err, Result};
use crate::linalg::principal_axes;
use crate::matrix::Matrix;

pub const DEFAULT_Q: f64 = 0.95;
pub const DEFAULT_BINS: usize = 100;
/// Recorded next to every threshold so readers know how it was computed.
pub const PERCENTILE_CONVENTION: &str = "linear";

/// Linear-interpolation percentile of unsorted `scores`.
pub fn percentile(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(invalid_arg!("percentile of an empty score list"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid_arg!("quantile {q} outside [0, 1]"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid_arg!("NaN score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_percentile(&sorted, q))
}

fn sorted_percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// The `q` percentile of training scores used as the anomaly threshold.
pub fn percentile_threshold(train_scores: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid_arg!("threshold quantile {q} outside (0, 1)"));
    }
    percentile(train_scores, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
}

/// Anomaly iff `score > threshold`.
pub fn classify(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| {
            if s > threshold {
                Label::Anomaly
            } else {
                Label::Normal
            }
        })
        .collect()
}

fn flagged_fraction(scores: &[f64], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub q: f64,
    pub convention: alloc::string::String,
    pub threshold: f64,
    pub train_flagged_fraction: f64,
    pub val_flagged_fraction: f64,
}

impl ThresholdReport {
    pub fn new(train_scores: &[f64], val_scores: &[f64], q: f64) -> Result<Self> {
        let threshold = percentile_threshold(train_scores, q)?;
        Ok(Self {
            q,
            convention: PERCENTILE_CONVENTION.into(),
            threshold,
            train_flagged_fraction: flagged_fraction(train_scores, threshold),
            val_flagged_fraction: flagged_fraction(val_scores, threshold),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub coords: Matrix,
    pub evr: [f64; 2],
}

/// Projects rows onto their top two principal directions.
pub fn project_2d(vectors: &Matrix) -> Result<Projection2D> {
    if vectors.rows() < 3 {
        return Err(invalid_arg!("projection needs at least 3 rows"));
    }
    if vectors.cols() < 2 {
        return Err(invalid_arg!("projection needs at least 2 columns"));
    }
    let axes = principal_axes(vectors, Some(2))?;
    if axes.total_variance <= 0.0 {
        return Err(invalid_arg!("data has zero total variance"));
    }
    let mut coords = Matrix::zeros(vectors.rows(), 2);
    for (i, row) in vectors.iter_rows().enumerate() {
        for k in 0..axes.components.rows().min(2) {
            coords[(i, k)] = row
                .iter()
                .zip(&axes.mean)
                .zip(axes.components.row(k))
                .map(|((x, m), c)| (x - m) * c)
                .sum();
        }
    }
    let ratio = |k: usize| {
        axes.variances
            .get(k)
            .map_or(0.0, |&v| (v / axes.total_variance).clamp(0.0, 1.0))
    };
    Ok(Projection2D {
        coords,
        evr: [ratio(0), ratio(1)],
    })
}

/// Equal-width bins shared by training and validation scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramExport {
    pub bin_edges: Vec<f64>,
    pub train_counts: Vec<u64>,
    pub val_counts: Vec<u64>,
    /// Rendering hint only; counts are raw.
    pub log_y_hint: bool,
}

/// A single-sample histogram with its normalized density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `count / (n · bin_width)` per bin.
    pub fn density(&self) -> Vec<f64> {
        let n: u64 = self.counts.iter().sum();
        self.counts
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(&c, w)| {
                let width = w[1] - w[0];
                if n == 0 || width <= 0.0 {
                    0.0
                } else {
                    c as f64 / (n as f64 * width)
                }
            })
            .collect()
    }
}

/// `n_bins + 1` edges over `[lo, hi]`; a degenerate range is widened by a
/// few ulps so every value still lands in the first bin.
fn bin_edges(lo: f64, hi: f64, n_bins: usize) -> Vec<f64> {
    let hi = if hi > lo {
        hi
    } else {
        lo + f64::EPSILON * lo.abs().max(1.0) * n_bins as f64
    };
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    edges[n_bins] = hi;
    edges
}

fn bin_counts(values: &[f64], edges: &[f64]) -> Vec<u64> {
    let n_bins = edges.len() - 1;
    let lo = edges[0];
    let width = (edges[n_bins] - lo) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        let idx = libm::floor((v - lo) / width);
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(n_bins - 1) };
        counts[idx] += 1;
    }
    counts
}

fn finite_range(values: impl Iterator<Item = f64>) -> Result<(f64, f64)> {
    let mut range: Option<(f64, f64)> = None;
    for v in values {
        if !v.is_finite() {
            return Err(invalid_arg!("non-finite value {v} in histogram input"));
        }
        range = Some(match range {
            None => (v, v),
            Some((lo, hi)) => (lo.min(v), hi.max(v)),
        });
    }
    range.ok_or_else(|| invalid_arg!("histogram of no values"))
}

pub fn score_histogram(
    train_scores: &[f64],
    val_scores: &[f64],
    n_bins: usize,
) -> Result<HistogramExport> {
    if n_bins == 0 {
        return Err(invalid_arg!("histogram needs at least one bin"));
    }
    let (lo, hi) = finite_range(train_scores.iter().chain(val_scores).copied())?;
    let edges = bin_edges(lo, hi, n_bins);
    Ok(HistogramExport {
        train_counts: bin_counts(train_scores, &edges),
        val_counts: bin_counts(val_scores, &edges),
        bin_edges: edges,
        log_y_hint: true,
    })
}

pub fn histogram(values: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(invalid_arg!("histogram needs at least one bin"));
    }
    let (lo, hi) = finite_range(values.iter().copied())?;
    let edges = bin_edges(lo, hi, n_bins);
    Ok(Histogram {
        counts: bin_counts(values, &edges),
        bin_edges: edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentReport {
    pub per_dimension_histograms: Vec<Histogram>,
    pub heatmap: Matrix,
}

/// One histogram per latent dimension plus the raw activation matrix.
pub fn latent_report(latents: &Matrix, expected_dim: usize, n_bins: usize) -> Result<LatentReport> {
    if latents.cols() != expected_dim {
        return Err(shape_err!(
            "latent width {} vs model latent dim {expected_dim}",
            latents.cols()
        ));
    }
    let mut per_dimension_histograms = Vec::with_capacity(expected_dim);
    let mut column = Vec::with_capacity(latents.rows());
    for j in 0..expected_dim {
        column.clear();
        column.extend(latents.iter_rows().map(|r| r[j]));
        per_dimension_histograms.push(histogram(&column, n_bins)?);
    }
    Ok(LatentReport {
        per_dimension_histograms,
        heatmap: latents.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Tukey box statistics: interpolated quartiles, whiskers at the most extreme
/// points within 1.5·IQR, everything beyond listed as an outlier.
pub fn box_stats(scores: &[f64]) -> Result<BoxStats> {
    if scores.is_empty() {
        return Err(invalid_arg!("box statistics of an empty score list"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid_arg!("non-finite score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = sorted_percentile(&sorted, 0.25);
    let median = sorted_percentile(&sorted, 0.5);
    let q3 = sorted_percentile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|&v| v >= lo_fence && v <= hi_fence);
    let whisker_low = inside().next().unwrap_or(q1);
    let whisker_high = inside().next_back().unwrap_or(q3);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&v| v < lo_fence || v > hi_fence)
        .collect();
    Ok(BoxStats {
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Area under the ROC curve of `scores` against binary labels (`true` =
/// anomaly), with ties counted half. `None` when a class is empty.
pub fn roc_auc(scores: &[f64], is_anomaly: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len().min(is_anomaly.len())).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = order.iter().filter(|&&i| is_anomaly[i]).count();
    let negatives = order.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    // Mann-Whitney U with midranks
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| is_anomaly[k]).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}
