//! Row whitening of an ill-conditioned least-squares term.
//!
//! Speckle images at desk scale are smooth, so the rows of the sensing
//! matrix span only a few dozen numerically distinct directions and its
//! singular values fall off by many orders of magnitude. First-order methods
//! then crawl along the small singular directions, which carry exactly the
//! sub-speckle detail. Replacing `(M, y)` by `(V^T, S^-1 U^T y)` from a
//! truncated SVD `M = U S V^T` keeps the same solution set of `M x = y` on the
//! retained subspace while making the data term perfectly conditioned.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Whitened data term `(B, b)` with orthonormal rows in `B`.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub matrix: Array2<f64>,
    pub target: Array1<f64>,
    /// Singular values kept, largest first.
    pub singular_values: Vec<f64>,
    /// Relative norm of the part of `y` outside the column space of `M`.
    pub unexplained: f64,
}

/// Orthonormal basis of the row space, by block Gram-Schmidt with one
/// reorthogonalization pass. Rows whose residual falls below
/// `drop_tol * max_row_norm` add nothing.
fn row_space(m: ArrayView2<f64>, drop_tol: f64) -> Array2<f64> {
    const BLOCK: usize = 64;
    let (k, n) = m.dim();
    let limit = k.min(n);
    let scale = m
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);
    let mut q = Array2::<f64>::zeros((limit, n));
    let mut rank = 0;
    let mut start = 0;
    while start < k && rank < limit {
        let end = (start + BLOCK).min(k);
        let mut block = m.slice(s![start..end, ..]).to_owned();
        for _ in 0..2 {
            let basis = q.slice(s![..rank, ..]);
            let coef = block.dot(&basis.t());
            block -= &coef.dot(&basis);
        }
        let first = rank;
        for mut v in block.rows_mut() {
            if rank == limit {
                break;
            }
            for _ in 0..2 {
                let recent = q.slice(s![first..rank, ..]);
                let coef = recent.dot(&v);
                v -= &recent.t().dot(&coef);
            }
            let norm = v.dot(&v).sqrt();
            if norm > drop_tol * scale {
                q.row_mut(rank).assign(&(&v / norm));
                rank += 1;
            }
        }
        start = end;
    }
    q.slice(s![..rank, ..]).to_owned()
}

/// Truncated-SVD whitening. Singular values are kept above
/// `max(cutoff, unexplained) * s_max`.
pub fn whiten(m: ArrayView2<f64>, y: ArrayView1<f64>, cutoff: f64) -> Result<Whitened> {
    if m.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            actual: y.len(),
        });
    }
    let q = row_space(m, cutoff * 1e-2);
    if q.nrows() == 0 {
        return Err(Error::Empty("sensing matrix row space"));
    }
    // M = C Q with C = M Q^T small; the SVD of C gives that of M.
    let c = m.dot(&q.t());
    let (rows, cols) = c.dim();
    let svd = DMatrix::from_row_iterator(rows, cols, c.iter().copied()).svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = svd.singular_values[order[0]];
    if !(s_max > 0.0) {
        return Err(Error::Empty("sensing matrix row space"));
    }
    // The part of y that no combination of rows explains is model error.
    // Directions weaker than that relative level would only amplify it.
    let explained: f64 = order
        .iter()
        .map(|&i| (0..rows).map(|r| u[(r, i)] * y[r]).sum::<f64>().powi(2))
        .sum();
    let total = y.dot(&y);
    let unexplained = if total > 0.0 {
        ((total - explained).max(0.0) / total).sqrt()
    } else {
        0.0
    };
    let threshold = cutoff.max(unexplained);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > threshold * s_max)
        .collect();

    let mut matrix = Array2::zeros((kept.len(), m.ncols()));
    let mut target = Array1::zeros(kept.len());
    let mut singular_values = Vec::with_capacity(kept.len());
    for (out, &i) in kept.iter().enumerate() {
        let sigma = svd.singular_values[i];
        let w = Array1::from_iter((0..cols).map(|j| v_t[(i, j)]));
        matrix.row_mut(out).assign(&q.t().dot(&w));
        let uy: f64 = (0..rows).map(|r| u[(r, i)] * y[r]).sum();
        target[out] = uy / sigma;
        singular_values.push(sigma);
    }
    Ok(Whitened {
        matrix,
        target,
        singular_values,
        unexplained,
    })
}
