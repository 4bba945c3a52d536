//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Number of singular values above `rel_tol × σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * max).count()
}

/// Orthonormal (Euclidean) basis of the column space: the rank comes from
/// the singular values, the basis from a column-pivoted QR (the SVD's
/// singular vectors are unreliable on some rank-deficient inputs).
pub fn column_space(m: &DMatrix<f64>, rel_tol: f64) -> Vec<Vec<f64>> {
    let r = numerical_rank(m, rel_tol);
    if r == 0 {
        return Vec::new();
    }
    let q = m.clone().col_piv_qr().q();
    (0..r).map(|k| q.column(k).iter().cloned().collect()).collect()
}
