//! Factor risk models: a diagonal-plus-low-rank covariance
//! `Γ = diag(ξ²σ²) + (Ω/γ) Φ (Ω/γ)ᵀ` calibrated so the model variances
//! reproduce the sample variances, with a K×K-solve inverse.

mod build;
mod stats;

pub use build::{build_general, build_heterotic, HeteroticOptions, SPECIFIC_VAR_FLOOR};
pub use stats::{
    clip_to_psd, demean_rows, first_principal_component, psd_sqrt, row_means,
    sample_correlation, sample_covariance, sample_variances, standardize_rows,
};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ids::{CategoryId, EtfId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("panel has a missing value for {etf} on {date}; preprocess first")]
    PanelIncomplete { etf: EtfId, date: NaiveDate },
    #[error("lookback {lookback} exceeds panel length {available}")]
    LookbackTooLong { lookback: usize, available: usize },
    #[error("need at least 2 dates in the lookback, got {0}")]
    TooFewDates(usize),
    #[error("heterotic construction needs a binary 2-level taxonomy: {0}")]
    TaxonomyShape(String),
    #[error("no ETFs are present in both the panel and the classification")]
    EmptyUniverse,
    #[error("top level too large for lookback: {factors} factors need at least {} dates", factors + 2)]
    TopLevelTooLarge { factors: usize, lookback: usize },
    #[error("loading row for {etf} sums to {sum}, expected 1")]
    LoadingRowSum { etf: EtfId, sum: f64 },
    #[error("factor {factor} has zero return variance over the lookback")]
    ZeroVarianceFactor { factor: CategoryId },
    #[error("loadings have {loading_rows} rows but the panel has {panel_rows}")]
    ShapeMismatch {
        loading_rows: usize,
        panel_rows: usize,
    },
}

/// Why an ETF present in the inputs was left out of the modeled universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Exclusion {
    /// Zero return variance over the lookback; cannot be standardized.
    ZeroVariance,
    /// In the panel but absent from the classification/loadings.
    NotClassified,
    /// In the classification/loadings but absent from the panel.
    NoReturns,
}

impl Exclusion {
    pub fn name(&self) -> &'static str {
        match self {
            Exclusion::ZeroVariance => "zero-variance",
            Exclusion::NotClassified => "not-classified",
            Exclusion::NoReturns => "no-returns",
        }
    }
}

/// A calibrated factor risk model over `etf_ids`.
///
/// Stored pieces (N ETFs, K factors):
/// - `omega`: raw variance-space loadings, `Ω = diag(σ) U`;
/// - `gamma`: per-row calibration scalars, 1 unless the factor part
///   overshot the total variance;
/// - `beta`: calibrated correlation-space loadings `U/γ = Ω/(γσ)`;
/// - `factor_cov`: the modeled factor covariance `Φ` (PSD);
/// - `specific_var`: correlation-space residual variances `ξ²`, each in
///   `[SPECIFIC_VAR_FLOOR, 1]`;
/// - `total_var`: sample variances `σ²` the diagonal is calibrated to.
///
/// The model correlation is `Ψ = diag(ξ²) + β Φ βᵀ` with unit diagonal,
/// and the model covariance is `Γ = diag(σ) Ψ diag(σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    pub etf_ids: Vec<EtfId>,
    pub factor_ids: Vec<CategoryId>,
    pub omega: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub factor_cov: DMatrix<f64>,
    pub specific_var: DVector<f64>,
    pub total_var: DVector<f64>,
    pub gamma: DVector<f64>,
    pub excluded: Vec<(EtfId, Exclusion)>,
}

impl RiskModel {
    pub fn n_etfs(&self) -> usize {
        self.etf_ids.len()
    }

    pub fn n_factors(&self) -> usize {
        self.factor_ids.len()
    }

    pub fn etf_index(&self, etf: &EtfId) -> Option<usize> {
        self.etf_ids.iter().position(|e| e == etf)
    }

    /// Model correlation `Ψ_ij`; `None` when an index is out of the
    /// universe. The diagonal is exactly 1.
    pub fn model_correlation(&self, i: usize, j: usize) -> Option<f64> {
        if i >= self.n_etfs() || j >= self.n_etfs() {
            return None;
        }
        if i == j {
            return Some(1.0);
        }
        let mut sum = 0.0;
        for a in 0..self.n_factors() {
            for b in 0..self.n_factors() {
                sum += self.beta[(i, a)] * self.factor_cov[(a, b)] * self.beta[(j, b)];
            }
        }
        Some(sum)
    }

    /// Dense model correlation matrix `Ψ = diag(ξ²) + β Φ βᵀ`.
    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let mut psi = &self.beta * &self.factor_cov * self.beta.transpose();
        for i in 0..self.n_etfs() {
            psi[(i, i)] += self.specific_var[i];
        }
        psi
    }

    /// Dense model covariance matrix `Γ = diag(σ) Ψ diag(σ)`.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let sigma = self.total_var.map(|v| v.sqrt());
        let psi = self.correlation_matrix();
        DMatrix::from_fn(self.n_etfs(), self.n_etfs(), |i, j| {
            sigma[i] * psi[(i, j)] * sigma[j]
        })
    }

    /// Variance-space loadings that enter the covariance: `Ω/γ = diag(σ) β`.
    pub fn calibrated_loadings(&self) -> DMatrix<f64> {
        let sigma = self.total_var.map(|v| v.sqrt());
        DMatrix::from_fn(self.n_etfs(), self.n_factors(), |i, a| {
            sigma[i] * self.beta[(i, a)]
        })
    }

    /// Inverse of the model covariance via the diagonal-plus-low-rank
    /// identity: with `D = diag(ξ²σ²)` and `M = diag(σ) β Φ^{1/2}`,
    ///
    /// `Γ⁻¹ = D⁻¹ − D⁻¹ M (I_K + Mᵀ D⁻¹ M)⁻¹ Mᵀ D⁻¹`
    ///
    /// Only a K×K system is solved; no N×N inversion happens. Using
    /// `Φ^{1/2}` keeps the identity valid for rank-deficient `Φ`.
    pub fn invert(&self) -> ModelInverse {
        let n = self.n_etfs();
        let sigma = self.total_var.map(|v| v.sqrt());
        let d_inv = DVector::from_fn(n, |i, _| {
            1.0 / (self.specific_var[i] * self.total_var[i])
        });
        let phi_root = psd_sqrt(&self.factor_cov);
        let m = {
            let scaled = DMatrix::from_fn(n, self.n_factors(), |i, a| {
                sigma[i] * self.beta[(i, a)]
            });
            scaled * phi_root
        };
        // K×K core: I + Mᵀ D⁻¹ M
        let k = m.ncols();
        let d_inv_m = DMatrix::from_fn(n, k, |i, a| d_inv[i] * m[(i, a)]);
        let core = DMatrix::identity(k, k) + m.transpose() * &d_inv_m;
        let solved = core
            .clone()
            .cholesky()
            .map(|c| c.solve(&d_inv_m.transpose()))
            .unwrap_or_else(|| {
                core.lu()
                    .solve(&d_inv_m.transpose())
                    .expect("I + MᵀD⁻¹M is nonsingular")
            });
        let mut inverse = -(&d_inv_m * solved);
        for i in 0..n {
            inverse[(i, i)] += d_inv[i];
        }
        let floored = self
            .specific_var
            .iter()
            .filter(|v| **v <= SPECIFIC_VAR_FLOOR * (1.0 + 1e-12))
            .count();
        ModelInverse {
            matrix: inverse,
            floored_specific: floored,
            nearly_degenerate: 2 * floored > n,
        }
    }
}

/// Result of [`RiskModel::invert`]. `nearly_degenerate` warns that more
/// than half the universe sits at the specific-variance floor, meaning the
/// factor part explains essentially everything and the inverse is dominated
/// by the floor value.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInverse {
    pub matrix: DMatrix<f64>,
    pub floored_specific: usize,
    pub nearly_degenerate: bool,
}

/// Factor returns `f = Ωᵀ R` for a complete returns matrix (Eq-style
/// cross-sectional aggregation; rows of `omega` index the same ETFs as rows
/// of `returns`).
pub fn compute_factor_returns(
    omega: &DMatrix<f64>,
    returns: &DMatrix<f64>,
) -> Result<DMatrix<f64>, ModelError> {
    if omega.nrows() != returns.nrows() {
        return Err(ModelError::ShapeMismatch {
            loading_rows: omega.nrows(),
            panel_rows: returns.nrows(),
        });
    }
    Ok(omega.transpose() * returns)
}
