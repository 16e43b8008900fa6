//! Sample-moment and spectral helpers for the model builders. All moments
//! use the unbiased 1/(T-1) convention over the row dimension of an
//! observations-in-columns matrix.

use nalgebra::{DMatrix, DVector};

/// Sign threshold below which a principal component's entry sum is treated
/// as zero and the fallback sign rule applies.
const SIGN_SUM_TOL: f64 = 1e-12;

pub fn row_means(x: &DMatrix<f64>) -> DVector<f64> {
    let t = x.ncols() as f64;
    DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.sum() / t))
}

/// Unbiased sample variances per row; requires at least 2 columns.
pub fn sample_variances(x: &DMatrix<f64>) -> DVector<f64> {
    let means = row_means(x);
    let denom = (x.ncols() - 1) as f64;
    DVector::from_iterator(
        x.nrows(),
        x.row_iter().enumerate().map(|(i, r)| {
            r.iter().map(|v| (v - means[i]).powi(2)).sum::<f64>() / denom
        }),
    )
}

/// Demeans each row. The result has exact zero row means up to rounding.
pub fn demean_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let means = row_means(x);
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, s| x[(i, s)] - means[i])
}

/// Demeans and scales each row to unit sample standard deviation.
/// Zero-variance rows become all-zero; callers decide whether that is legal.
pub fn standardize_rows(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let centered = demean_rows(x);
    let variances = sample_variances(x);
    let stds = variances.map(|v| v.sqrt());
    let scaled = DMatrix::from_fn(x.nrows(), x.ncols(), |i, s| {
        if stds[i] > 0.0 {
            centered[(i, s)] / stds[i]
        } else {
            0.0
        }
    });
    (scaled, stds)
}

/// Sample covariance of the rows: `centered * centeredᵀ / (T-1)`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let centered = demean_rows(x);
    let denom = (x.ncols() - 1) as f64;
    let mut cov = &centered * centered.transpose() / denom;
    symmetrize(&mut cov);
    cov
}

/// Sample correlation of the rows; zero-variance rows yield zero rows and
/// a unit diagonal entry.
pub fn sample_correlation(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (scaled, _) = standardize_rows(x);
    let denom = (x.ncols() - 1) as f64;
    let mut corr = &scaled * scaled.transpose() / denom;
    symmetrize(&mut corr);
    for i in 0..corr.nrows() {
        corr[(i, i)] = 1.0;
    }
    corr
}

fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// First principal component (unit eigenvector of the largest eigenvalue)
/// of a symmetric matrix. The sign is fixed so the entry sum is positive;
/// when the sum vanishes, so that the sign is otherwise arbitrary, the
/// first nonzero entry is made positive.
pub fn first_principal_component(m: &DMatrix<f64>) -> DVector<f64> {
    debug_assert_eq!(m.nrows(), m.ncols());
    if m.nrows() == 1 {
        return DVector::from_element(1, 1.0);
    }
    let eigen = m.clone().symmetric_eigen();
    let top = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty spectrum");
    let mut pc: DVector<f64> = eigen.eigenvectors.column(top).into();
    let sum: f64 = pc.iter().sum();
    let flip = if sum.abs() > SIGN_SUM_TOL {
        sum < 0.0
    } else {
        pc.iter().find(|v| **v != 0.0).map(|v| *v < 0.0).unwrap_or(false)
    };
    if flip {
        pc.neg_mut();
    }
    pc
}

/// Projects a symmetric matrix onto the positive semidefinite cone by
/// clipping negative eigenvalues at zero.
pub fn clip_to_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eigen = m.clone().symmetric_eigen();
    let clipped = DVector::from_iterator(
        eigen.eigenvalues.len(),
        eigen.eigenvalues.iter().map(|v| v.max(0.0)),
    );
    let mut out =
        &eigen.eigenvectors * DMatrix::from_diagonal(&clipped) * eigen.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Symmetric PSD square root, clipping tiny negative eigenvalues at zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eigen = m.clone().symmetric_eigen();
    let roots = DVector::from_iterator(
        eigen.eigenvalues.len(),
        eigen.eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    );
    let mut out =
        &eigen.eigenvectors * DMatrix::from_diagonal(&roots) * eigen.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variances_match_hand_computation() {
        // (1,2,3): mean 2, squared deviations (1,0,1), variance 1
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let v = sample_variances(&x);
        assert!((v[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standardized_rows_have_unit_variance() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 4.0, 8.0, -3.0, 0.0, 3.0, 9.0]);
        let (scaled, _) = standardize_rows(&x);
        let v = sample_variances(&scaled);
        for i in 0..2 {
            assert!((v[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_diagonal_is_one_and_symmetric() {
        let x = DMatrix::from_row_slice(2, 5, &[1.0, 2.0, 3.0, 2.0, 5.0, 2.0, 1.0, 4.0, 3.0, 1.0]);
        let c = sample_correlation(&x);
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(1, 1)], 1.0);
        assert_eq!(c[(0, 1)], c[(1, 0)]);
        assert!(c[(0, 1)].abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn first_pc_of_perfect_correlation_is_uniform() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let pc = first_principal_component(&m);
        let expected = 1.0 / 3.0f64.sqrt();
        for v in pc.iter() {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn first_pc_sign_sum_is_positive() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 2.0, -2.0, -1.0, 1.0, -2.0, 2.0]);
        let c = sample_correlation(&x);
        let pc = first_principal_component(&c);
        // perfectly anti-correlated pair: entries have opposite signs and
        // cancel; the fallback rule makes the first entry positive
        assert!(pc[0] > 0.0);
    }

    #[test]
    fn singleton_pc_is_unit() {
        let m = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(first_principal_component(&m), DVector::from_element(1, 1.0));
    }

    #[test]
    fn psd_clip_removes_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let clipped = clip_to_psd(&m);
        let eigen = clipped.clone().symmetric_eigen();
        for v in eigen.eigenvalues.iter() {
            assert!(*v >= -1e-12);
        }
        // the PSD part of [[1,2],[2,1]] is 1.5 * ones
        for v in clipped.iter() {
            assert!((v - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let root = psd_sqrt(&m);
        let back = &root * root.transpose();
        for (a, b) in back.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
