//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues below this fraction of the largest are treated as zero when
/// truncating Gram matrices. Gram eigenvalues are squared singular values,
/// so this corresponds to a singular-value cutoff of 1e-6.
pub const GRAM_RANK_CUTOFF: f64 = 1e-12;

/// Singular values below this fraction of the largest are zero in
/// [`pinv`].
pub const PINV_CUTOFF: f64 = 1e-10;

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
pub fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenpairs of a PSD matrix whose eigenvalue exceeds `cutoff` times the
/// largest; returns `(values, vectors)` with vectors as columns.
pub fn truncated_eigen(m: DMatrix<f64>, cutoff: f64) -> (Vec<f64>, DMatrix<f64>) {
    let (values, vectors) = sorted_eigen(m);
    let top = values.iter().copied().fold(0.0f64, f64::max);
    if top <= 0.0 {
        return (Vec::new(), DMatrix::zeros(vectors.nrows(), 0));
    }
    let r = values.iter().take_while(|&&v| v > cutoff * top).count();
    (values.iter().take(r).copied().collect(), vectors.columns(0, r).into_owned())
}

/// Moore-Penrose pseudoinverse via SVD with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.max();
    let eps = if top > 0.0 { PINV_CUTOFF * top } else { 0.0 };
    svd.pseudo_inverse(eps).expect("both factors were computed")
}

/// Right inverse `Mᵀ (M Mᵀ)⁻¹` of a matrix with full row rank.
pub fn right_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mmt = m * m.transpose();
    let chol = mmt.cholesky()?;
    Some(m.transpose() * chol.inverse())
}

/// Row-major `rows x cols` slice into a matrix.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Row-major flattening of a matrix.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `q^T P q`.
pub fn quad_form(p: &DMatrix<f64>, q: &[f64]) -> f64 {
    let n = q.len();
    let mut total = 0.0;
    for j in 0..n {
        if q[j] == 0.0 {
            continue;
        }
        let col = p.column(j);
        let mut acc = 0.0;
        for i in 0..n {
            acc += q[i] * col[i];
        }
        total += acc * q[j];
    }
    total
}

/// `Σ_i w_i r_i r_iᵀ` for the given rows.
pub fn weighted_gram<'a>(n: usize, rows: impl Iterator<Item = (&'a [f64], f64)>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, n);
    for (row, w) in rows {
        if w == 0.0 {
            continue;
        }
        for j in 0..n {
            let wj = w * row[j];
            if wj == 0.0 {
                continue;
            }
            let mut col = g.column_mut(j);
            for i in 0..n {
                col[i] += wj * row[i];
            }
        }
    }
    g
}

/// Largest absolute entry, zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
