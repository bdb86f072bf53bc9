//! Principal axes of a data matrix, shared by the PCA baseline and the 2-D
//! projection. The eigendecomposition itself is nalgebra's symmetric QR
//! solver, run on whichever of the covariance (d×d) or Gram (n×n) matrix is
//! smaller.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid_arg, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAxes {
    pub mean: Vec<f64>,
    /// `r × d`, orthonormal rows, sorted by decreasing variance.
    pub components: Matrix,
    /// Sample variance (divisor `n − 1`) along each component.
    pub variances: Vec<f64>,
    /// Sum of per-column sample variances.
    pub total_variance: f64,
}

/// Top `max_components` principal axes (all `min(n − 1, d)` when `None`).
pub fn principal_axes(data: &Matrix, max_components: Option<usize>) -> Result<PrincipalAxes> {
    let (n, d) = data.shape();
    if n < 2 || d == 0 {
        return Err(invalid_arg!("principal axes need at least 2 rows and 1 column"));
    }
    let full_rank = (n - 1).min(d);
    let r = max_components.unwrap_or(full_rank).min(full_rank);
    if r == 0 {
        return Err(invalid_arg!("no components requested"));
    }

    let mean = data.column_means();
    let mut centered = data.clone();
    for row in centered.as_mut_slice().chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let denom = (n - 1) as f64;
    let total_variance = centered.as_slice().iter().map(|v| v * v).sum::<f64>() / denom;

    let use_gram = n < d;
    let scatter = if use_gram {
        centered.matmul_nt(&centered)?
    } else {
        centered.matmul_tn(&centered)?
    };
    let size = scatter.rows();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(size, size, scatter.as_slice()));
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(r);

    let mut components = Matrix::zeros(r, d);
    let mut variances = Vec::with_capacity(r);
    for (k, &idx) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[idx].max(0.0);
        variances.push(lambda / denom);
        let col = eig.eigenvectors.column(idx);
        let row = components.row_mut(k);
        if use_gram {
            // v = Xᵀu, normalized below
            for (i, x) in centered.iter_rows().enumerate() {
                let u = col[i];
                for (c, xv) in row.iter_mut().zip(x) {
                    *c += u * xv;
                }
            }
        } else {
            for (c, v) in row.iter_mut().zip(col.iter()) {
                *c = *v;
            }
        }
    }
    orthonormalize_rows(&mut components);
    for k in 0..r {
        let row = components.row_mut(k);
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }

    Ok(PrincipalAxes {
        mean,
        components,
        variances,
        total_variance,
    })
}

/// Modified Gram-Schmidt, applied twice. Rows that vanish (directions the data
/// never spans) are replaced by orthogonalized standard basis vectors.
fn orthonormalize_rows(m: &mut Matrix) {
    let (r, d) = m.shape();
    let mut basis_cursor = 0;
    for k in 0..r {
        let mut attempts = 0;
        loop {
            for _ in 0..2 {
                for prev in 0..k {
                    let dot: f64 = m.row(k).iter().zip(m.row(prev)).map(|(a, b)| a * b).sum();
                    let prev_row = m.row(prev).to_vec();
                    for (v, p) in m.row_mut(k).iter_mut().zip(&prev_row) {
                        *v -= dot * p;
                    }
                }
            }
            let norm = libm::sqrt(m.row(k).iter().map(|v| v * v).sum::<f64>());
            if norm > 1e-10 {
                m.row_mut(k).iter_mut().for_each(|v| *v /= norm);
                break;
            }
            attempts += 1;
            assert!(attempts <= d + 1, "cannot complete an orthonormal basis");
            let mut e = vec![0.0; d];
            e[basis_cursor % d] = 1.0;
            basis_cursor += 1;
            m.row_mut(k).copy_from_slice(&e);
        }
    }
}
