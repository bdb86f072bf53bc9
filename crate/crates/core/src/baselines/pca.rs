//! PCA reconstruction-error baseline.
//!
//! Fitting: optionally standardize with training mean and (population)
//! standard deviation, choose the component count, then fit principal axes on
//! the transformed training data. Scoring: standardize, project, inverse
//! project, and sum squared differences in the transformed space.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, shape_err, Result};
use crate::linalg::principal_axes;
use crate::matrix::Matrix;

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Components {
    /// Exact count.
    Count(usize),
    /// Smallest count whose cumulative explained variance ratio reaches the
    /// fraction, `0 < f < 1`.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    /// `None` selects by `theta_var`.
    pub n_components: Option<Components>,
    pub theta_var: f64,
    pub standardize: bool,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            n_components: None,
            theta_var: 0.95,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Per-dimension training std when standardizing; zero stds become 1.
    pub std: Option<Vec<f64>>,
    /// Mean of the (possibly standardized) training data.
    pub center: Vec<f64>,
    /// `k × d`, orthonormal rows.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub n_selected: usize,
    pub config: PcaConfig,
    pub warnings: Vec<String>,
}

/// Smallest `k` with cumulative ratio `≥ target`.
fn count_for_fraction(ratios: &[f64], target: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        if cumulative >= target {
            return i + 1;
        }
    }
    // rounding can leave the running sum a hair below 1
    ratios.len()
}

impl PcaModel {
    pub fn fit(train: &Matrix, cfg: &PcaConfig) -> Result<Self> {
        let (n, d) = train.shape();
        if n < 2 {
            return Err(invalid_arg!("PCA needs at least 2 training rows"));
        }
        if !train.is_finite() {
            return Err(invalid_arg!("PCA input has non-finite values"));
        }
        if !(cfg.theta_var > 0.0 && cfg.theta_var <= 1.0) {
            return Err(invalid_arg!("theta_var {} outside (0, 1]", cfg.theta_var));
        }
        let mut warnings = Vec::new();
        let mean = train.column_means();
        let std = cfg.standardize.then(|| {
            let mut var = alloc::vec![0.0; d];
            for row in train.iter_rows() {
                for j in 0..d {
                    let t = row[j] - mean[j];
                    var[j] += t * t;
                }
            }
            var.iter()
                .enumerate()
                .map(|(j, v)| {
                    let s = libm::sqrt(v / n as f64);
                    if s > 0.0 {
                        s
                    } else {
                        warnings.push(alloc::format!(
                            "dimension {j} has zero training std; using 1"
                        ));
                        1.0
                    }
                })
                .collect::<Vec<f64>>()
        });
        let transformed = transform(train, &mean, std.as_deref());

        let full_rank = (n - 1).min(d);
        let k = match cfg.n_components {
            None | Some(Components::Fraction(_)) => {
                let target = match cfg.n_components {
                    Some(Components::Fraction(f)) => {
                        if !(f > 0.0 && f < 1.0) {
                            return Err(invalid_arg!("component fraction {f} outside (0, 1)"));
                        }
                        f
                    }
                    _ => cfg.theta_var,
                };
                let full = principal_axes(&transformed, None)?;
                if full.total_variance <= 0.0 {
                    return Err(invalid_arg!(
                        "training data has zero variance; component count resolves to 0"
                    ));
                }
                let ratios: Vec<f64> = full
                    .variances
                    .iter()
                    .map(|v| v / full.total_variance)
                    .collect();
                count_for_fraction(&ratios, target)
            }
            Some(Components::Count(k)) => {
                if k == 0 {
                    return Err(invalid_arg!("n_components must be positive"));
                }
                if k > full_rank {
                    return Err(invalid_arg!(
                        "n_components {k} exceeds min(n - 1, d) = {full_rank}"
                    ));
                }
                k
            }
        };

        let axes = principal_axes(&transformed, Some(k))?;
        let total = axes.total_variance;
        let explained_variance_ratio = axes
            .variances
            .iter()
            .map(|v| if total > 0.0 { v / total } else { 0.0 })
            .collect();
        Ok(Self {
            mean,
            std,
            center: axes.mean,
            components: axes.components,
            explained_variance: axes.variances,
            explained_variance_ratio,
            n_selected: k,
            config: *cfg,
            warnings,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Rows mapped into the space the model was fitted in.
    pub fn transform_input(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(shape_err!("PCA expects width {}, got {}", self.dim(), x.cols()));
        }
        Ok(transform(x, &self.mean, self.std.as_deref()))
    }

    /// Component coordinates of each (transformed) row.
    pub fn project(&self, transformed: &Matrix) -> Result<Matrix> {
        let mut centered = transformed.clone();
        for row in centered.as_mut_slice().chunks_exact_mut(self.dim()) {
            for (v, c) in row.iter_mut().zip(&self.center) {
                *v -= c;
            }
        }
        centered.matmul_nt(&self.components)
    }

    pub fn inverse_project(&self, coords: &Matrix) -> Result<Matrix> {
        let mut out = coords.matmul(&self.components)?;
        for row in out.as_mut_slice().chunks_exact_mut(self.dim()) {
            for (v, c) in row.iter_mut().zip(&self.center) {
                *v += c;
            }
        }
        Ok(out)
    }

    /// Squared reconstruction error per row.
    pub fn reconstruction_error(&self, x: &Matrix) -> Result<Vec<f64>> {
        let transformed = self.transform_input(x)?;
        let recon = self.inverse_project(&self.project(&transformed)?)?;
        Ok(transformed
            .iter_rows()
            .zip(recon.iter_rows())
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
            .collect())
    }
}

fn transform(x: &Matrix, mean: &[f64], std: Option<&[f64]>) -> Matrix {
    match std {
        None => x.clone(),
        Some(std) => {
            let mut out = x.clone();
            for row in out.as_mut_slice().chunks_exact_mut(mean.len()) {
                for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
                    *v = (*v - m) / s;
                }
            }
            out
        }
    }
}
