//! Sparse ETF-to-constituent weight table.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ids::{EtfId, SecurityId};

/// Default tolerance on per-ETF weight sums. Real holdings files carry
/// rounding noise around the sum-to-1 convention.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum HoldingsError {
    #[error("duplicate holding ({etf}, {security})")]
    Duplicate { etf: EtfId, security: SecurityId },
    #[error("weights for {etf} sum to {sum}, expected 1 within {tol}")]
    WeightSum { etf: EtfId, sum: f64, tol: f64 },
    #[error("weights for {etf} sum to {sum}; cannot renormalize a non-positive total")]
    NonPositiveSum { etf: EtfId, sum: f64 },
}

/// Constituent weights grouped per ETF. Rows are kept sorted by security id
/// so iteration order is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HoldingsTable {
    rows: BTreeMap<EtfId, Vec<(SecurityId, f64)>>,
}

impl HoldingsTable {
    /// Builds a validated table from raw `(etf, security, weight)` entries.
    ///
    /// Rows whose weights do not sum to 1 within `tol` are renormalized when
    /// `renormalize` is set, and rejected otherwise.
    pub fn from_entries(
        entries: impl IntoIterator<Item = (EtfId, SecurityId, f64)>,
        tol: f64,
        renormalize: bool,
    ) -> Result<(Self, Vec<EtfId>), HoldingsError> {
        let mut rows: BTreeMap<EtfId, Vec<(SecurityId, f64)>> = BTreeMap::new();
        for (etf, security, weight) in entries {
            let row = rows.entry(etf.clone()).or_default();
            if row.iter().any(|(s, _)| *s == security) {
                return Err(HoldingsError::Duplicate { etf, security });
            }
            row.push((security, weight));
        }
        let mut renormalized = Vec::new();
        for (etf, row) in &mut rows {
            row.sort_by(|a, b| a.0.cmp(&b.0));
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() <= tol {
                continue;
            }
            if !renormalize {
                return Err(HoldingsError::WeightSum {
                    etf: etf.clone(),
                    sum,
                    tol,
                });
            }
            if sum <= 0.0 {
                return Err(HoldingsError::NonPositiveSum {
                    etf: etf.clone(),
                    sum,
                });
            }
            for (_, w) in row.iter_mut() {
                *w /= sum;
            }
            renormalized.push(etf.clone());
        }
        Ok((Self { rows }, renormalized))
    }

    pub fn row(&self, etf: &EtfId) -> Option<&[(SecurityId, f64)]> {
        self.rows.get(etf).map(Vec::as_slice)
    }

    pub fn etfs(&self) -> impl Iterator<Item = &EtfId> {
        self.rows.keys()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EtfId, &[(SecurityId, f64)])> {
        self.rows.iter().map(|(k, v)| (k, v.as_slice()))
    }
}
