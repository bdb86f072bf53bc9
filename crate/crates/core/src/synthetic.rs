//! Seeded synthetic embedding sets with known structure, used as fixtures for
//! training, scoring and end-to-end runs.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Normal rows scattered around a fixed mean, plus anomalies whose mean is
/// shifted along a few random coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationFixture {
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub dim: usize,
    /// Per-coordinate standard deviation of the scatter.
    pub sigma: f64,
    /// Euclidean norm of the shared mean, which points along a random
    /// direction.
    pub mean_norm: f64,
    /// Anomaly shift per affected coordinate, in units of `sigma`.
    pub shift_sigmas: f64,
    pub shifted_coords: usize,
    /// When set, the scatter lives in a random subspace of this rank
    /// instead of being isotropic.
    pub subspace_rank: Option<usize>,
    pub seed: u64,
}

impl Default for SeparationFixture {
    fn default() -> Self {
        Self {
            n_normal: 800,
            n_anomaly: 40,
            dim: 1024,
            sigma: 0.5,
            mean_norm: 4.0,
            shift_sigmas: 5.0,
            shifted_coords: 8,
            subspace_rank: None,
            seed: 0,
        }
    }
}

/// Generated rows with construction labels; anomalies come last.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub data: Matrix,
    pub is_anomaly: Vec<bool>,
    pub shifted_coords: Vec<usize>,
}

impl SeparationFixture {
    pub fn generate(&self) -> Result<LabeledData> {
        if self.n_normal == 0 || self.dim == 0 {
            return Err(invalid_arg!("fixture needs normal rows and a positive width"));
        }
        if self.shifted_coords > self.dim {
            return Err(invalid_arg!("cannot shift more coordinates than the width"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid_arg!("sigma must be finite and nonnegative"));
        }
        let mut rng = Rng::new(self.seed);
        let d = self.dim;
        let mean = random_direction(d, &mut rng)
            .into_iter()
            .map(|v| v * self.mean_norm)
            .collect::<Vec<_>>();
        let basis = match self.subspace_rank {
            Some(k) if k == 0 || k > d => {
                return Err(invalid_arg!("subspace rank must be in 1..={d}"));
            }
            Some(k) => Some(orthonormal_rows(k, d, &mut rng)),
            None => None,
        };
        let mut coords: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut coords);
        coords.truncate(self.shifted_coords);
        coords.sort_unstable();

        let total = self.n_normal + self.n_anomaly;
        let mut data = Vec::with_capacity(total * d);
        for i in 0..total {
            let mut row = mean.clone();
            match &basis {
                None => row.iter_mut().for_each(|v| *v += self.sigma * rng.normal()),
                Some(u) => {
                    // standard deviation sigma along each basis direction
                    for k in 0..u.rows() {
                        let g = self.sigma * rng.normal();
                        for (v, b) in row.iter_mut().zip(u.row(k)) {
                            *v += g * b;
                        }
                    }
                }
            }
            if i >= self.n_normal {
                for &j in &coords {
                    row[j] += self.shift_sigmas * self.sigma;
                }
            }
            data.extend(row);
        }
        let mut is_anomaly = vec![false; self.n_normal];
        is_anomaly.resize(total, true);
        Ok(LabeledData {
            data: Matrix::from_vec(total, d, data)?,
            is_anomaly,
            shifted_coords: coords,
        })
    }
}

/// `n × d` rows of rank `rank` (before noise): the product of an `n × rank`
/// and a `rank × d` matrix of standard normal entries, so every coordinate
/// has variance `rank`, plus isotropic noise of standard deviation `noise`.
pub fn low_rank(n: usize, d: usize, rank: usize, noise: f64, seed: u64) -> Result<Matrix> {
    if rank == 0 || rank > d.min(n) {
        return Err(invalid_arg!("rank must be in 1..=min(n, d)"));
    }
    let mut rng = Rng::new(seed);
    let factors = gaussian_with(n, rank, &mut rng);
    let loadings = gaussian_with(rank, d, &mut rng);
    let mut data = factors.matmul(&loadings)?;
    if noise > 0.0 {
        data.as_mut_slice().iter_mut().for_each(|v| *v += noise * rng.normal());
    }
    Ok(data)
}

fn gaussian_with(n: usize, d: usize, rng: &mut Rng) -> Matrix {
    let data = (0..n * d).map(|_| rng.normal()).collect();
    Matrix::from_vec(n, d, data).expect("length matches shape")
}

/// `n × d` standard normal entries.
pub fn gaussian(n: usize, d: usize, seed: u64) -> Matrix {
    gaussian_with(n, d, &mut Rng::new(seed))
}

/// Uniformly distributed unit vector.
pub fn random_direction(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `k × d` matrix with orthonormal rows (modified Gram-Schmidt on Gaussian
/// draws).
pub fn orthonormal_rows(k: usize, d: usize, rng: &mut Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v = random_direction(d, rng);
        for _ in 0..2 {
            for u in &rows {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_rows(&rows).expect("rows share a width")
}
