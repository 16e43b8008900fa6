//! Returns panel: an N x T matrix of ETF returns with an explicit
//! missing-value mask.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::ids::EtfId;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("dates are not strictly increasing at position {0}")]
    DatesNotIncreasing(usize),
    #[error("values are {rows}x{cols} but panel declares {n} ETFs and {t} dates")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        n: usize,
        t: usize,
    },
    #[error("duplicate ETF id {0} in panel")]
    DuplicateEtf(EtfId),
}

/// N x T panel of returns. `values[(i, s)]` is meaningful only where
/// `missing[(i, s)]` is false; masked entries are stored as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    pub etf_ids: Vec<EtfId>,
    pub dates: Vec<NaiveDate>,
    pub values: DMatrix<f64>,
    pub missing: DMatrix<bool>,
}

impl ReturnsPanel {
    pub fn new(
        etf_ids: Vec<EtfId>,
        dates: Vec<NaiveDate>,
        values: DMatrix<f64>,
        missing: DMatrix<bool>,
    ) -> Result<Self, PanelError> {
        for (pos, pair) in dates.windows(2).enumerate() {
            if pair[0] >= pair[1] {
                return Err(PanelError::DatesNotIncreasing(pos + 1));
            }
        }
        let (n, t) = (etf_ids.len(), dates.len());
        if values.nrows() != n || values.ncols() != t {
            return Err(PanelError::ShapeMismatch {
                rows: values.nrows(),
                cols: values.ncols(),
                n,
                t,
            });
        }
        if missing.nrows() != n || missing.ncols() != t {
            return Err(PanelError::ShapeMismatch {
                rows: missing.nrows(),
                cols: missing.ncols(),
                n,
                t,
            });
        }
        let mut sorted = etf_ids.clone();
        sorted.sort();
        for pair in sorted.windows(2) {
            if pair[0] == pair[1] {
                return Err(PanelError::DuplicateEtf(pair[0].clone()));
            }
        }
        Ok(Self {
            etf_ids,
            dates,
            values,
            missing,
        })
    }

    pub fn n_etfs(&self) -> usize {
        self.etf_ids.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn row_index(&self, etf: &EtfId) -> Option<usize> {
        self.etf_ids.iter().position(|e| e == etf)
    }

    pub fn value(&self, i: usize, s: usize) -> Option<f64> {
        if self.missing[(i, s)] {
            None
        } else {
            Some(self.values[(i, s)])
        }
    }

    /// Fraction of entries that are missing.
    pub fn missing_fraction(&self) -> f64 {
        if self.missing.is_empty() {
            return 0.0;
        }
        let miss = self.missing.iter().filter(|&&m| m).count();
        miss as f64 / self.missing.len() as f64
    }

    /// Restricts the panel to a subset of ETF rows, preserving order of
    /// `keep` indices.
    pub fn select_rows(&self, keep: &[usize]) -> ReturnsPanel {
        let t = self.n_dates();
        let mut values = DMatrix::zeros(keep.len(), t);
        let mut missing = DMatrix::from_element(keep.len(), t, true);
        for (new_i, &old_i) in keep.iter().enumerate() {
            for s in 0..t {
                values[(new_i, s)] = self.values[(old_i, s)];
                missing[(new_i, s)] = self.missing[(old_i, s)];
            }
        }
        ReturnsPanel {
            etf_ids: keep.iter().map(|&i| self.etf_ids[i].clone()).collect(),
            dates: self.dates.clone(),
            values,
            missing,
        }
    }

    /// Restricts the panel to the trailing `lookback` dates.
    pub fn tail(&self, lookback: usize) -> ReturnsPanel {
        assert!(lookback <= self.n_dates());
        let start = self.n_dates() - lookback;
        ReturnsPanel {
            etf_ids: self.etf_ids.clone(),
            dates: self.dates[start..].to_vec(),
            values: self.values.columns(start, lookback).into_owned(),
            missing: self.missing.columns(start, lookback).into_owned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, d).unwrap()
    }

    #[test]
    fn rejects_unsorted_dates() {
        let err = ReturnsPanel::new(
            vec![EtfId::new("E1")],
            vec![date(2), date(1)],
            DMatrix::zeros(1, 2),
            DMatrix::from_element(1, 2, false),
        )
        .unwrap_err();
        assert!(matches!(err, PanelError::DatesNotIncreasing(1)));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let err = ReturnsPanel::new(
            vec![EtfId::new("E1"), EtfId::new("E2")],
            vec![date(1)],
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, false),
        )
        .unwrap_err();
        assert!(matches!(err, PanelError::ShapeMismatch { .. }));
    }

    #[test]
    fn tail_keeps_trailing_dates() {
        let panel = ReturnsPanel::new(
            vec![EtfId::new("E1")],
            vec![date(1), date(2), date(3)],
            DMatrix::from_row_slice(1, 3, &[0.1, 0.2, 0.3]),
            DMatrix::from_element(1, 3, false),
        )
        .unwrap();
        let tail = panel.tail(2);
        assert_eq!(tail.dates, vec![date(2), date(3)]);
        assert_eq!(tail.values[(0, 0)], 0.2);
    }
}
