//! Regression diagnostic for scalar (style) factors.
//!
//! A style factor `β` models pairwise correlations through the bilinear
//! forms `1`, `β_i + β_j`, and `β_iβ_j`. Regressing the observed pairwise
//! correlations on those three pair features measures how much of the
//! correlation structure the factor actually explains. With the two
//! non-constant features demeaned, the intercept coefficient equals the
//! mean pairwise correlation, so the other coefficients isolate what `β`
//! adds beyond a constant-correlation model.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative tolerance below which a regressor column is dropped as
/// collinear with the columns before it.
pub const COLUMN_DROP_TOL: f64 = 1e-10;

/// Tolerance for the symmetry and unit-diagonal preconditions on Ψ.
const CORRELATION_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DiagnosticError {
    #[error("diagnostic needs at least 3 instruments, got {0}")]
    TooFewInstruments(usize),
    #[error("correlation matrix is {rows}x{cols} but the factor has {factor} entries")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        factor: usize,
    },
    #[error("matrix is not a correlation matrix: {0}")]
    NotCorrelation(String),
    #[error("factor contains a non-finite value")]
    NonFiniteFactor,
}

/// Output of [`style_factor_diagnostic`]. Coefficients are on the pair
/// features over the strict lower triangle `{(i, j) | i > j}`:
/// the constant column, the demeaned sum feature `β_i + β_j`, and the
/// demeaned product feature `β_iβ_j`. A `None` coefficient means the column
/// was collinear and dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleDiagnosticResult {
    /// Coefficient on the constant column; equals the mean pairwise
    /// correlation.
    pub intercept: f64,
    /// Coefficient on the demeaned sum feature.
    pub coef_sum: Option<f64>,
    /// Coefficient on the demeaned product feature.
    pub coef_product: Option<f64>,
    pub r_squared: f64,
    pub mean_pairwise_correlation: f64,
    /// Number of pairs, N(N-1)/2.
    pub n_pairs: usize,
    /// Names of dropped columns ("sum", "product"), in design order.
    pub dropped: Vec<&'static str>,
}

impl StyleDiagnosticResult {
    /// Fitted value for one pair feature row, with dropped columns
    /// contributing zero.
    pub fn predict(&self, sum_demeaned: f64, product_demeaned: f64) -> f64 {
        self.intercept
            + self.coef_sum.unwrap_or(0.0) * sum_demeaned
            + self.coef_product.unwrap_or(0.0) * product_demeaned
    }
}

/// Pair features of a style factor over the strict lower triangle, in row
/// scan order `(1,0), (2,0), (2,1), (3,0), ...`: the correlation vector and
/// the raw sum and product features.
pub fn pair_features(
    psi: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = beta.len();
    let m = n * (n - 1) / 2;
    let mut corr = DVector::zeros(m);
    let mut sum = DVector::zeros(m);
    let mut product = DVector::zeros(m);
    let mut a = 0;
    for i in 1..n {
        for j in 0..i {
            corr[a] = psi[(i, j)];
            sum[a] = beta[i] + beta[j];
            product[a] = beta[i] * beta[j];
            a += 1;
        }
    }
    (corr, sum, product)
}

/// Regresses pairwise correlations on a constant, the demeaned sum feature
/// `β_i + β_j`, and the demeaned product feature `β_iβ_j`, by least squares
/// with collinear columns dropped ([`COLUMN_DROP_TOL`], relative).
///
/// `psi` may be a sample correlation matrix or a model correlation matrix;
/// it must be symmetric with unit diagonal.
pub fn style_factor_diagnostic(
    psi: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> Result<StyleDiagnosticResult, DiagnosticError> {
    let n = beta.len();
    if psi.nrows() != n || psi.ncols() != n {
        return Err(DiagnosticError::ShapeMismatch {
            rows: psi.nrows(),
            cols: psi.ncols(),
            factor: n,
        });
    }
    if n < 3 {
        return Err(DiagnosticError::TooFewInstruments(n));
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticError::NonFiniteFactor);
    }
    for i in 0..n {
        if (psi[(i, i)] - 1.0).abs() > CORRELATION_TOL {
            return Err(DiagnosticError::NotCorrelation(format!(
                "diagonal entry {i} is {}",
                psi[(i, i)]
            )));
        }
        for j in 0..i {
            if (psi[(i, j)] - psi[(j, i)]).abs() > CORRELATION_TOL {
                return Err(DiagnosticError::NotCorrelation(format!(
                    "asymmetric at ({i}, {j})"
                )));
            }
        }
    }

    let (corr, sum, product) = pair_features(psi, beta);
    let m = corr.len();
    let mean_corr = corr.mean();
    let sum_d = sum.add_scalar(-sum.mean());
    let product_d = product.add_scalar(-product.mean());

    // greedy rank-revealing orthogonalization over the three columns; the
    // constant column always survives
    let columns: [(&'static str, DVector<f64>); 3] = [
        ("const", DVector::from_element(m, 1.0)),
        ("sum", sum_d),
        ("product", product_d),
    ];
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut retained: Vec<usize> = Vec::new();
    let mut dropped: Vec<&'static str> = Vec::new();
    // R factor of the retained columns: column c = Σ_b r[b][c] q_b
    let mut r_rows: Vec<Vec<f64>> = Vec::new();
    for (c, (name, col)) in columns.iter().enumerate() {
        let scale = col.norm();
        let mut residual = col.clone();
        let mut coords = Vec::with_capacity(basis.len());
        for q in &basis {
            let proj = q.dot(&residual);
            residual -= q * proj;
            coords.push(proj);
        }
        let norm = residual.norm();
        if norm <= COLUMN_DROP_TOL * scale.max(1.0) {
            dropped.push(name);
            continue;
        }
        coords.push(norm);
        r_rows.push(coords);
        basis.push(residual / norm);
        retained.push(c);
    }

    // back-substitute R b = Qᵀ corr for the retained coefficients
    let k = basis.len();
    let qtc: Vec<f64> = basis.iter().map(|q| q.dot(&corr)).collect();
    let mut coef = vec![0.0; k];
    for c in (0..k).rev() {
        let mut v = qtc[c];
        for b in (c + 1)..k {
            v -= r_rows[b][c] * coef[b];
        }
        coef[c] = v / r_rows[c][c];
    }

    let mut fitted = DVector::zeros(m);
    for (c, &orig) in retained.iter().enumerate() {
        fitted += &columns[orig].1 * coef[c];
    }
    let residual = &corr - &fitted;
    let ss_res = residual.norm_squared();
    let ss_tot = corr.add_scalar(-mean_corr).norm_squared();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };

    let coefficient_of = |c: usize| retained.iter().position(|&o| o == c).map(|p| coef[p]);
    Ok(StyleDiagnosticResult {
        intercept: coefficient_of(0).unwrap_or(mean_corr),
        coef_sum: coefficient_of(1),
        coef_product: coefficient_of(2),
        r_squared,
        mean_pairwise_correlation: mean_corr,
        n_pairs: m,
        dropped,
    })
}
