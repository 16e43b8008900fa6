//! Returns panel cleaning: outlier vetoing, category-average fill for
//! missing values, and completeness enforcement over the model lookback.
//!
//! The contract is two-pass: clipping strictly precedes filling, so a
//! vetoed value never contributes to any category average, and every fill
//! is the mean of same-date, same-category values from the panel as it
//! stood after clipping and before any fill.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ids::{CategoryId, EtfId};
use crate::panel::ReturnsPanel;
use crate::taxonomy::{LevelAssignment, TaxonomyLevel};

/// Default absolute-return veto threshold (daily returns beyond 10% are
/// treated as data errors unless overridden).
pub const DEFAULT_CLIP_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("lookback {lookback} exceeds panel length {available}")]
    LookbackTooLong { lookback: usize, available: usize },
    #[error("lookback must be at least 1")]
    ZeroLookback,
    #[error("fill classification must be a binary taxonomy level")]
    LevelNotBinary,
}

/// Absolute-return veto thresholds: a uniform default with optional
/// per-asset-class overrides (leveraged and volatility products routinely
/// exceed an equity-calibrated threshold).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRule {
    pub default: f64,
    /// Overrides keyed by asset-class category id.
    pub per_class: BTreeMap<CategoryId, f64>,
    /// Asset class of each ETF, used only to resolve overrides.
    pub etf_class: BTreeMap<EtfId, CategoryId>,
}

impl ClipRule {
    pub fn uniform(threshold: f64) -> Self {
        Self {
            default: threshold,
            per_class: BTreeMap::new(),
            etf_class: BTreeMap::new(),
        }
    }

    pub fn threshold_for(&self, etf: &EtfId) -> f64 {
        self.etf_class
            .get(etf)
            .and_then(|class| self.per_class.get(class))
            .copied()
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillKind {
    /// |R| exceeded the threshold; the value was vetoed to missing.
    ClippedToMissing,
    /// A missing value was replaced by the same-date category average.
    FilledCategoryAverage,
    /// The ETF still had a missing value inside the lookback and was removed.
    Dropped,
}

impl FillKind {
    pub fn name(self) -> &'static str {
        match self {
            FillKind::ClippedToMissing => "clipped-to-NA",
            FillKind::FilledCategoryAverage => "filled-category-avg",
            FillKind::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FillAction {
    pub etf: EtfId,
    pub date: NaiveDate,
    pub kind: FillKind,
    pub value_before: Option<f64>,
    pub value_after: Option<f64>,
}

/// A preprocessed panel: every surviving ETF is complete over the trailing
/// `lookback` dates, and the log records each clip, fill, and drop.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanPanel {
    pub panel: ReturnsPanel,
    pub fill_log: Vec<FillAction>,
    pub dropped: Vec<EtfId>,
    pub lookback: usize,
}

impl CleanPanel {
    /// Fill log as CSV with header `etf_id,date,action,value_before,value_after`.
    pub fn fill_log_csv(&self) -> String {
        let mut out = String::from("etf_id,date,action,value_before,value_after\n");
        for action in &self.fill_log {
            let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                action.etf,
                action.date,
                action.kind.name(),
                fmt(action.value_before),
                fmt(action.value_after)
            ));
        }
        out
    }
}

/// Cleans `panel` for model building: (1) vetoes values with
/// `|R| > threshold` to missing, (2) fills every missing value with the
/// same-date average over its `level1` category (averages computed after
/// clipping and before any fill), (3) drops ETFs that still have a missing
/// value within the trailing `lookback` dates.
///
/// `level1` is typically the most granular classification the model will
/// use; when a classification is about to be rebuilt or split, pass the
/// original (pre-split) level so fill averages match it.
pub fn preprocess_returns(
    panel: &ReturnsPanel,
    level1: &TaxonomyLevel,
    clip: &ClipRule,
    lookback: usize,
) -> Result<CleanPanel, PrepError> {
    if lookback == 0 {
        return Err(PrepError::ZeroLookback);
    }
    if lookback > panel.n_dates() {
        return Err(PrepError::LookbackTooLong {
            lookback,
            available: panel.n_dates(),
        });
    }
    let assignment = match &level1.assignment {
        LevelAssignment::Binary(map) => map,
        LevelAssignment::Weighted(_) => return Err(PrepError::LevelNotBinary),
    };

    let n = panel.n_etfs();
    let t = panel.n_dates();
    let mut values = panel.values.clone();
    let mut missing = panel.missing.clone();
    let mut fill_log = Vec::new();

    // pass 1: veto outliers
    for i in 0..n {
        let etf = &panel.etf_ids[i];
        let threshold = clip.threshold_for(etf);
        for s in 0..t {
            if !missing[(i, s)] && values[(i, s)].abs() > threshold {
                fill_log.push(FillAction {
                    etf: etf.clone(),
                    date: panel.dates[s],
                    kind: FillKind::ClippedToMissing,
                    value_before: Some(values[(i, s)]),
                    value_after: None,
                });
                values[(i, s)] = 0.0;
                missing[(i, s)] = true;
            }
        }
    }

    // category membership among panel rows
    let mut members: BTreeMap<&CategoryId, Vec<usize>> = BTreeMap::new();
    for (i, etf) in panel.etf_ids.iter().enumerate() {
        if let Some(category) = assignment.get(etf) {
            members.entry(category).or_default().push(i);
        }
    }

    // pass 2: fill from post-clip, pre-fill category averages
    let mut filled = Vec::new();
    for rows in members.values() {
        for s in 0..t {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &i in rows {
                if !missing[(i, s)] {
                    sum += values[(i, s)];
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let average = sum / count as f64;
            for &i in rows {
                if missing[(i, s)] {
                    filled.push((i, s, average));
                }
            }
        }
    }
    for (i, s, average) in filled {
        values[(i, s)] = average;
        missing[(i, s)] = false;
        fill_log.push(FillAction {
            etf: panel.etf_ids[i].clone(),
            date: panel.dates[s],
            kind: FillKind::FilledCategoryAverage,
            value_before: None,
            value_after: Some(average),
        });
    }

    // pass 3: completeness over the trailing lookback
    let start = t - lookback;
    let mut keep = Vec::with_capacity(n);
    let mut dropped = Vec::new();
    for i in 0..n {
        let first_missing = (start..t).find(|&s| missing[(i, s)]);
        match first_missing {
            None => keep.push(i),
            Some(s) => {
                dropped.push(panel.etf_ids[i].clone());
                fill_log.push(FillAction {
                    etf: panel.etf_ids[i].clone(),
                    date: panel.dates[s],
                    kind: FillKind::Dropped,
                    value_before: None,
                    value_after: None,
                });
            }
        }
    }

    fill_log.sort_by(|a, b| (&a.etf, a.date).cmp(&(&b.etf, b.date)));
    let cleaned = ReturnsPanel::new(
        keep.iter().map(|&i| panel.etf_ids[i].clone()).collect(),
        panel.dates.clone(),
        nalgebra::DMatrix::from_fn(keep.len(), t, |r, s| values[(keep[r], s)]),
        nalgebra::DMatrix::from_fn(keep.len(), t, |r, s| missing[(keep[r], s)]),
    )
    .expect("row subset of a valid panel is valid");
    Ok(CleanPanel {
        panel: cleaned,
        fill_log,
        dropped,
        lookback,
    })
}
