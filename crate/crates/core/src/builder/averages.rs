//! Per-category average return series.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::builder::BuilderError;
use crate::ids::CategoryId;
use crate::panel::ReturnsPanel;
use crate::taxonomy::{LevelAssignment, TaxonomyLevel};

/// Average return series per category, aligned with a source panel's dates.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAverages {
    /// Declared categories of the level, sorted.
    pub categories: Vec<CategoryId>,
    /// Row per category, column per panel date.
    pub values: DMatrix<f64>,
    pub missing: DMatrix<bool>,
    /// Categories with no member present in the panel; their rows are
    /// entirely missing.
    pub empty_categories: Vec<CategoryId>,
}

impl CategoryAverages {
    pub fn row_index(&self, category: &CategoryId) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }
}

/// Computes the per-date mean over the members whose return is present:
/// members missing on a date are dropped from that date's mean, and a date
/// with no present member is marked missing. Members absent from the panel
/// contribute nothing.
pub fn category_average_returns(
    panel: &ReturnsPanel,
    level: &TaxonomyLevel,
) -> Result<CategoryAverages, BuilderError> {
    let LevelAssignment::Binary(assignment) = &level.assignment else {
        return Err(BuilderError::LevelNotBinary);
    };
    let mut categories = level.categories.clone();
    categories.sort();
    let index: BTreeMap<&CategoryId, usize> =
        categories.iter().enumerate().map(|(a, c)| (c, a)).collect();

    let t = panel.n_dates();
    let k = categories.len();
    let mut sums = DMatrix::<f64>::zeros(k, t);
    let mut counts = DMatrix::<u32>::zeros(k, t);
    let mut present = vec![false; k];
    for (etf, category) in assignment {
        let Some(i) = panel.row_index(etf) else {
            continue;
        };
        let a = index[category];
        present[a] = true;
        for s in 0..t {
            if !panel.missing[(i, s)] {
                sums[(a, s)] += panel.values[(i, s)];
                counts[(a, s)] += 1;
            }
        }
    }

    let mut values = DMatrix::zeros(k, t);
    let mut missing = DMatrix::from_element(k, t, true);
    for a in 0..k {
        for s in 0..t {
            if counts[(a, s)] > 0 {
                values[(a, s)] = sums[(a, s)] / f64::from(counts[(a, s)]);
                missing[(a, s)] = false;
            }
        }
    }
    let empty_categories = categories
        .iter()
        .zip(&present)
        .filter(|(_, p)| !**p)
        .map(|(c, _)| c.clone())
        .collect();
    Ok(CategoryAverages {
        categories,
        values,
        missing,
        empty_categories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::EtfId;
    use chrono::NaiveDate;

    fn panel(ids: &[&str], rows: &[&[Option<f64>]]) -> ReturnsPanel {
        let t = rows[0].len();
        let dates: Vec<NaiveDate> = (0..t)
            .map(|s| NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(s as i64))
            .collect();
        let values = DMatrix::from_fn(rows.len(), t, |i, s| rows[i][s].unwrap_or(0.0));
        let missing = DMatrix::from_fn(rows.len(), t, |i, s| rows[i][s].is_none());
        ReturnsPanel::new(
            ids.iter().map(|e| EtfId::new(*e)).collect(),
            dates,
            values,
            missing,
        )
        .unwrap()
    }

    fn level(assignments: &[(&str, &str)], categories: &[&str]) -> TaxonomyLevel {
        TaxonomyLevel {
            categories: categories.iter().map(|c| CategoryId::new(*c)).collect(),
            assignment: LevelAssignment::Binary(
                assignments
                    .iter()
                    .map(|(e, c)| (EtfId::new(*e), CategoryId::new(*c)))
                    .collect(),
            ),
            parent_map: None,
        }
    }

    #[test]
    fn singleton_category_average_is_the_member_series() {
        let panel = panel(&["E1"], &[&[Some(0.01), Some(-0.02)]]);
        let avg = category_average_returns(&panel, &level(&[("E1", "A")], &["A"])).unwrap();
        assert_eq!(avg.values[(0, 0)], 0.01);
        assert_eq!(avg.values[(0, 1)], -0.02);
        assert!(!avg.missing[(0, 0)]);
    }

    #[test]
    fn mean_over_present_members() {
        let panel = panel(
            &["E1", "E2"],
            &[&[Some(0.01), Some(0.01)], &[Some(0.03), None]],
        );
        let avg =
            category_average_returns(&panel, &level(&[("E1", "A"), ("E2", "A")], &["A"])).unwrap();
        assert_eq!(avg.values[(0, 0)], 0.02);
        // the missing member drops out rather than polluting the mean
        assert_eq!(avg.values[(0, 1)], 0.01);
    }

    #[test]
    fn all_missing_date_stays_missing() {
        let panel = panel(&["E1"], &[&[None, Some(0.01)]]);
        let avg = category_average_returns(&panel, &level(&[("E1", "A")], &["A"])).unwrap();
        assert!(avg.missing[(0, 0)]);
        assert!(!avg.missing[(0, 1)]);
    }

    #[test]
    fn category_without_panel_members_is_flagged() {
        let panel = panel(&["E1"], &[&[Some(0.01)]]);
        let avg =
            category_average_returns(&panel, &level(&[("E1", "A"), ("E9", "B")], &["A", "B"]))
                .unwrap();
        assert_eq!(avg.empty_categories, vec![CategoryId::new("B")]);
        let b = avg.row_index(&CategoryId::new("B")).unwrap();
        assert!(avg.missing[(b, 0)]);
    }

    #[test]
    fn complete_panel_matches_plain_group_mean() {
        let panel = panel(
            &["E1", "E2", "E3"],
            &[
                &[Some(0.01), Some(0.04)],
                &[Some(0.03), Some(0.00)],
                &[Some(0.05), Some(0.02)],
            ],
        );
        let avg = category_average_returns(
            &panel,
            &level(&[("E1", "A"), ("E2", "A"), ("E3", "A")], &["A"]),
        )
        .unwrap();
        for (s, expect) in [(0, 0.03), (1, 0.02)] {
            assert!((avg.values[(0, s)] - expect).abs() < 1e-12);
        }
    }
}
