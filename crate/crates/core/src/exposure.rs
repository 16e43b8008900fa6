//! Look-through exposures: aggregates any categorical constituent attribute
//! to the ETF level through holdings weights, with thresholding into
//! binary/weighted/diversified classifications and tranche construction for
//! scalar attributes.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::holdings::HoldingsTable;
use crate::ids::{CategoryId, EtfId, SecurityId};

/// Tolerance for the `W` range checks; aggregation is a convex combination,
/// so anything beyond rounding noise indicates bad inputs.
pub const EXPOSURE_TOL: f64 = 1e-9;

/// Additive guard for exact-tie universes: `W_* = 0.5 + THRESHOLD_GUARD`
/// makes a row like (0.5, 0.5) diversified instead of ambiguous.
pub const THRESHOLD_GUARD: f64 = 1e-9;

/// Classifications whose attribute coverage falls below this default are
/// vetoed to [`Classification::Broad`].
pub const DEFAULT_MIN_COVERAGE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ExposureError {
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("binary thresholding requires a threshold above 0.5, got {0}")]
    BinaryThresholdTooLow(f64),
    #[error("exposure for {etf} on {category} is {value}, outside [0, 1]")]
    OutOfRange {
        etf: EtfId,
        category: CategoryId,
        value: f64,
    },
    #[error("exposure row for {etf} sums to {sum}, above 1")]
    RowSum { etf: EtfId, sum: f64 },
    #[error("matrix shape {rows}x{cols} does not match {n_etfs} ETFs x {n_categories} categories")]
    Shape {
        rows: usize,
        cols: usize,
        n_etfs: usize,
        n_categories: usize,
    },
    #[error("tranche boundaries must be strictly increasing")]
    BoundariesNotIncreasing,
    #[error("tranche spec needs one more label than boundary, got {labels} labels for {boundaries} boundaries")]
    LabelCount { labels: usize, boundaries: usize },
}

/// ETF-by-category exposure weights with per-ETF attribute coverage.
///
/// `coverage[i]` is the fraction of ETF `i`'s holdings weight carried by
/// constituents for which the attribute was defined. Constituents without
/// the attribute are omitted from the aggregation without renormalizing, so
/// each row sums to at most 1 and to exactly the coverage when the
/// underlying attribute weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMatrix {
    pub etf_ids: Vec<EtfId>,
    pub category_ids: Vec<CategoryId>,
    pub w: DMatrix<f64>,
    pub coverage: Vec<f64>,
}

impl ExposureMatrix {
    pub fn new(
        etf_ids: Vec<EtfId>,
        category_ids: Vec<CategoryId>,
        w: DMatrix<f64>,
        coverage: Vec<f64>,
    ) -> Result<Self, ExposureError> {
        if w.nrows() != etf_ids.len() || w.ncols() != category_ids.len() {
            return Err(ExposureError::Shape {
                rows: w.nrows(),
                cols: w.ncols(),
                n_etfs: etf_ids.len(),
                n_categories: category_ids.len(),
            });
        }
        for (i, etf) in etf_ids.iter().enumerate() {
            let mut sum = 0.0;
            for (a, category) in category_ids.iter().enumerate() {
                let value = w[(i, a)];
                if !(-EXPOSURE_TOL..=1.0 + EXPOSURE_TOL).contains(&value) {
                    return Err(ExposureError::OutOfRange {
                        etf: etf.clone(),
                        category: category.clone(),
                        value,
                    });
                }
                sum += value;
            }
            if sum > 1.0 + EXPOSURE_TOL {
                return Err(ExposureError::RowSum {
                    etf: etf.clone(),
                    sum,
                });
            }
        }
        Ok(Self {
            etf_ids,
            category_ids,
            w,
            coverage,
        })
    }

    pub fn n_etfs(&self) -> usize {
        self.etf_ids.len()
    }

    pub fn n_categories(&self) -> usize {
        self.category_ids.len()
    }

    pub fn etf_index(&self, etf: &EtfId) -> Option<usize> {
        self.etf_ids.iter().position(|e| e == etf)
    }

    pub fn category_index(&self, category: &CategoryId) -> Option<usize> {
        self.category_ids.iter().position(|c| c == category)
    }

    pub fn value(&self, etf: &EtfId, category: &CategoryId) -> Option<f64> {
        Some(self.w[(self.etf_index(etf)?, self.category_index(category)?)])
    }

    /// Exposure row of one ETF as (category, weight) pairs, zeros included.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (&CategoryId, f64)> {
        self.category_ids
            .iter()
            .enumerate()
            .map(move |(a, c)| (c, self.w[(i, a)]))
    }
}

/// Outcome of thresholding one exposure row.
#[derive(Debug, Clone, PartialEq)]
pub enum Classification {
    /// Exactly one category survived a threshold above 0.5.
    Binary(CategoryId),
    /// Surviving categories, renormalized to sum 1.
    Weighted(Vec<(CategoryId, f64)>),
    /// No entry reached the threshold (or coverage was vetoed): the ETF is
    /// diversified with respect to this attribute.
    Broad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Binary,
    Weighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedClassification {
    pub assignments: BTreeMap<EtfId, Classification>,
    pub threshold: f64,
}

impl ThresholdedClassification {
    pub fn get(&self, etf: &EtfId) -> Option<&Classification> {
        self.assignments.get(etf)
    }

    /// The single surviving category, when the outcome is definite: a binary
    /// assignment, or a weighted outcome that collapsed to one category.
    pub fn definite(&self, etf: &EtfId) -> Option<&CategoryId> {
        match self.assignments.get(etf)? {
            Classification::Binary(c) => Some(c),
            Classification::Weighted(ws) if ws.len() == 1 => Some(&ws[0].0),
            _ => None,
        }
    }
}

/// Aggregates a categorical constituent attribute to ETF level:
/// `W_iA = Σ_a ω_ia Λ_aA`, omitting constituents for which `attribute`
/// returns `None` (their holdings weight is not redistributed).
///
/// The category axis is the sorted union of categories observed. ETFs with
/// no attribute-carrying constituents get an all-zero row with coverage 0.
pub fn compute_exposures<F>(
    holdings: &HoldingsTable,
    attribute: F,
) -> Result<ExposureMatrix, ExposureError>
where
    F: Fn(&SecurityId) -> Option<Vec<(CategoryId, f64)>>,
{
    let etf_ids: Vec<EtfId> = holdings.etfs().cloned().collect();
    let mut attr_cache: BTreeMap<SecurityId, Option<Vec<(CategoryId, f64)>>> = BTreeMap::new();
    let mut categories: BTreeSet<CategoryId> = BTreeSet::new();
    for (_, row) in holdings.iter() {
        for (security, _) in row {
            let entry = attr_cache
                .entry(security.clone())
                .or_insert_with(|| attribute(security).filter(|v| !v.is_empty()));
            if let Some(cats) = entry {
                categories.extend(cats.iter().map(|(c, _)| c.clone()));
            }
        }
    }
    let category_ids: Vec<CategoryId> = categories.into_iter().collect();
    let index: BTreeMap<&CategoryId, usize> =
        category_ids.iter().enumerate().map(|(a, c)| (c, a)).collect();

    let mut w = DMatrix::zeros(etf_ids.len(), category_ids.len());
    let mut coverage = vec![0.0; etf_ids.len()];
    for (i, etf) in etf_ids.iter().enumerate() {
        let row = holdings.row(etf).unwrap_or(&[]);
        for (security, omega) in row {
            if let Some(cats) = &attr_cache[security] {
                coverage[i] += omega;
                for (category, lambda) in cats {
                    w[(i, index[category])] += omega * lambda;
                }
            }
        }
    }
    ExposureMatrix::new(etf_ids, category_ids, w, coverage)
}

/// Thresholds exposures with the default coverage veto
/// ([`DEFAULT_MIN_COVERAGE`]).
pub fn threshold_exposures(
    exposures: &ExposureMatrix,
    wstar: f64,
    mode: ThresholdMode,
) -> Result<ThresholdedClassification, ExposureError> {
    threshold_exposures_with(exposures, wstar, mode, DEFAULT_MIN_COVERAGE)
}

/// Thresholds each exposure row at `wstar`: entries below the threshold are
/// zeroed; if nothing survives (or coverage is below `min_coverage`) the ETF
/// is `Broad`. Binary mode requires `wstar > 0.5` so that at most one entry
/// can survive; weighted mode renormalizes survivors to sum 1.
///
/// Survival uses `>= wstar`. Pass `0.5 + THRESHOLD_GUARD` to break exact
/// 50/50 ties toward `Broad`.
pub fn threshold_exposures_with(
    exposures: &ExposureMatrix,
    wstar: f64,
    mode: ThresholdMode,
    min_coverage: f64,
) -> Result<ThresholdedClassification, ExposureError> {
    if !(wstar > 0.0 && wstar <= 1.0) {
        return Err(ExposureError::InvalidThreshold(wstar));
    }
    if mode == ThresholdMode::Binary && wstar <= 0.5 {
        return Err(ExposureError::BinaryThresholdTooLow(wstar));
    }
    let mut assignments = BTreeMap::new();
    for (i, etf) in exposures.etf_ids.iter().enumerate() {
        let survivors: Vec<(CategoryId, f64)> = exposures
            .row(i)
            .filter(|(_, v)| *v >= wstar)
            .map(|(c, v)| (c.clone(), v))
            .collect();
        let vetoed = exposures.coverage.get(i).is_some_and(|c| *c < min_coverage);
        let outcome = if survivors.is_empty() || vetoed {
            Classification::Broad
        } else {
            match mode {
                ThresholdMode::Binary => {
                    // wstar > 0.5 and row sum <= 1 leave room for one survivor
                    Classification::Binary(survivors.into_iter().next().unwrap().0)
                }
                ThresholdMode::Weighted => {
                    let total: f64 = survivors.iter().map(|(_, v)| v).sum();
                    Classification::Weighted(
                        survivors.into_iter().map(|(c, v)| (c, v / total)).collect(),
                    )
                }
            }
        };
        assignments.insert(etf.clone(), outcome);
    }
    Ok(ThresholdedClassification {
        assignments,
        threshold: wstar,
    })
}

/// Half-open tranches over a scalar attribute: boundaries `C(1) < … < C(K-1)`
/// split the line into `K` intervals, each left-exclusive and
/// right-inclusive, with the first unbounded below and the last unbounded
/// above.
#[derive(Debug, Clone, PartialEq)]
pub struct TrancheSpec {
    boundaries: Vec<f64>,
    labels: Vec<CategoryId>,
}

impl TrancheSpec {
    pub fn new(boundaries: Vec<f64>, labels: Vec<CategoryId>) -> Result<Self, ExposureError> {
        if labels.len() != boundaries.len() + 1 {
            return Err(ExposureError::LabelCount {
                labels: labels.len(),
                boundaries: boundaries.len(),
            });
        }
        if boundaries.windows(2).any(|p| p[0] >= p[1]) {
            return Err(ExposureError::BoundariesNotIncreasing);
        }
        Ok(Self { boundaries, labels })
    }

    pub fn labels(&self) -> &[CategoryId] {
        &self.labels
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Index of the tranche containing `value`: the first tranche whose
    /// upper boundary is >= value (boundary values fall in the lower
    /// tranche), or the top tranche above all boundaries.
    pub fn tranche_of(&self, value: f64) -> usize {
        self.boundaries
            .iter()
            .position(|b| value <= *b)
            .unwrap_or(self.boundaries.len())
    }

    pub fn label_of(&self, value: f64) -> &CategoryId {
        &self.labels[self.tranche_of(value)]
    }
}

/// Aggregates a scalar constituent attribute into tranche exposures:
/// each valued security contributes its holdings weight to exactly one
/// tranche; securities without a value are omitted as in
/// [`compute_exposures`]. All tranche labels appear as categories even when
/// empty.
pub fn tranche_exposures(
    holdings: &HoldingsTable,
    values: &BTreeMap<SecurityId, f64>,
    spec: &TrancheSpec,
) -> Result<ExposureMatrix, ExposureError> {
    let etf_ids: Vec<EtfId> = holdings.etfs().cloned().collect();
    let mut w = DMatrix::zeros(etf_ids.len(), spec.labels.len());
    let mut coverage = vec![0.0; etf_ids.len()];
    for (i, etf) in etf_ids.iter().enumerate() {
        let row = holdings.row(etf).unwrap_or(&[]);
        for (security, omega) in row {
            if let Some(value) = values.get(security) {
                coverage[i] += omega;
                w[(i, spec.tranche_of(*value))] += omega;
            }
        }
    }
    ExposureMatrix::new(etf_ids, spec.labels.clone(), w, coverage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn holdings(entries: Vec<(&str, &str, f64)>) -> HoldingsTable {
        let entries: Vec<(EtfId, SecurityId, f64)> = entries
            .into_iter()
            .map(|(e, s, w)| (EtfId::new(e), SecurityId::new(s), w))
            .collect();
        HoldingsTable::from_entries(entries, 1e-6, false).unwrap().0
    }

    fn sector(map: &[(&str, &str)]) -> impl Fn(&SecurityId) -> Option<Vec<(CategoryId, f64)>> {
        let map: BTreeMap<SecurityId, CategoryId> = map
            .iter()
            .map(|(s, c)| (SecurityId::new(*s), CategoryId::new(*c)))
            .collect();
        move |s| map.get(s).map(|c| vec![(c.clone(), 1.0)])
    }

    #[test]
    fn single_constituent_gives_indicator_row() {
        let h = holdings(vec![("E1", "S1", 1.0)]);
        let e = compute_exposures(&h, sector(&[("S1", "A")])).unwrap();
        assert_eq!(e.category_ids, vec![CategoryId::new("A")]);
        assert_eq!(e.w[(0, 0)], 1.0);
        assert_eq!(e.coverage, vec![1.0]);
    }

    #[test]
    fn exposure_is_weighted_sum_of_memberships() {
        let h = holdings(vec![("E1", "S1", 0.6), ("E1", "S2", 0.4)]);
        let e = compute_exposures(&h, sector(&[("S1", "A"), ("S2", "B")])).unwrap();
        assert_eq!(
            e.value(&EtfId::new("E1"), &CategoryId::new("A")),
            Some(0.6)
        );
        assert_eq!(
            e.value(&EtfId::new("E1"), &CategoryId::new("B")),
            Some(0.4)
        );
    }

    #[test]
    fn matches_dense_matrix_product_when_fully_covered() {
        // oracle: W = omega * Lambda as an explicit product
        let h = holdings(vec![
            ("E1", "S1", 0.3),
            ("E1", "S2", 0.5),
            ("E1", "S3", 0.2),
            ("E2", "S2", 1.0),
        ]);
        let lambda_map: BTreeMap<SecurityId, Vec<(CategoryId, f64)>> = [
            ("S1", vec![("A", 0.5), ("B", 0.5)]),
            ("S2", vec![("B", 1.0)]),
            ("S3", vec![("A", 0.25), ("C", 0.75)]),
        ]
        .into_iter()
        .map(|(s, cats)| {
            (
                SecurityId::new(s),
                cats.into_iter()
                    .map(|(c, w)| (CategoryId::new(c), w))
                    .collect(),
            )
        })
        .collect();
        let e = compute_exposures(&h, |s: &SecurityId| lambda_map.get(s).cloned()).unwrap();

        let securities = [
            SecurityId::new("S1"),
            SecurityId::new("S2"),
            SecurityId::new("S3"),
        ];
        let mut omega = DMatrix::zeros(2, 3);
        omega[(0, 0)] = 0.3;
        omega[(0, 1)] = 0.5;
        omega[(0, 2)] = 0.2;
        omega[(1, 1)] = 1.0;
        let mut lambda = DMatrix::zeros(3, e.n_categories());
        for (a, s) in securities.iter().enumerate() {
            for (c, wt) in &lambda_map[s] {
                lambda[(a, e.category_index(c).unwrap())] = *wt;
            }
        }
        let product = omega * lambda;
        for i in 0..2 {
            for a in 0..e.n_categories() {
                assert!((e.w[(i, a)] - product[(i, a)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_attribute_is_omitted_without_renormalizing() {
        let h = holdings(vec![("E1", "S1", 0.5), ("E1", "S2", 0.5)]);
        let e = compute_exposures(&h, sector(&[("S1", "A")])).unwrap();
        assert_eq!(e.category_ids, vec![CategoryId::new("A")]);
        assert_eq!(e.w[(0, 0)], 0.5);
        assert_eq!(e.coverage, vec![0.5]);
    }

    fn row_matrix(values: &[f64]) -> ExposureMatrix {
        let categories: Vec<CategoryId> = (1..=values.len())
            .map(|i| CategoryId::new(format!("C{i}")))
            .collect();
        ExposureMatrix::new(
            vec![EtfId::new("E1")],
            categories,
            DMatrix::from_row_slice(1, values.len(), values),
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn dominant_entry_survives_guarded_majority_threshold() {
        let e = row_matrix(&[0.55, 0.30, 0.15]);
        let c =
            threshold_exposures(&e, 0.5 + THRESHOLD_GUARD, ThresholdMode::Binary).unwrap();
        assert_eq!(
            c.get(&EtfId::new("E1")),
            Some(&Classification::Binary(CategoryId::new("C1")))
        );
    }

    #[test]
    fn all_below_threshold_is_broad() {
        let e = row_matrix(&[0.40, 0.35, 0.25]);
        let c = threshold_exposures(&e, 0.5, ThresholdMode::Weighted).unwrap();
        assert_eq!(c.get(&EtfId::new("E1")), Some(&Classification::Broad));
    }

    #[test]
    fn weighted_mode_renormalizes_survivors() {
        let e = row_matrix(&[0.45, 0.40, 0.15]);
        let c = threshold_exposures(&e, 0.35, ThresholdMode::Weighted).unwrap();
        match c.get(&EtfId::new("E1")).unwrap() {
            Classification::Weighted(ws) => {
                // oracle: zero entries below 0.35, divide the rest by 0.85
                assert_eq!(ws.len(), 2);
                assert!((ws[0].1 - 0.45 / 0.85).abs() < 1e-12);
                assert!((ws[1].1 - 0.40 / 0.85).abs() < 1e-12);
                let total: f64 = ws.iter().map(|(_, v)| v).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn binary_mode_rejects_low_threshold() {
        let e = row_matrix(&[1.0]);
        assert!(matches!(
            threshold_exposures(&e, 0.5, ThresholdMode::Binary),
            Err(ExposureError::BinaryThresholdTooLow(_))
        ));
    }

    #[test]
    fn low_coverage_is_vetoed_to_broad() {
        let e = ExposureMatrix::new(
            vec![EtfId::new("E1")],
            vec![CategoryId::new("A")],
            DMatrix::from_row_slice(1, 1, &[0.3]),
            vec![0.3],
        )
        .unwrap();
        // 0.3/0.3 of covered weight is in A, but coverage is below the veto
        let c = threshold_exposures(&e, 0.25, ThresholdMode::Weighted).unwrap();
        assert_eq!(c.get(&EtfId::new("E1")), Some(&Classification::Broad));
    }

    #[test]
    fn lowering_threshold_never_drops_survivors() {
        let e = row_matrix(&[0.45, 0.40, 0.15]);
        let mut last = 0;
        for wstar in [0.5, 0.41, 0.35, 0.10] {
            let c = threshold_exposures(&e, wstar, ThresholdMode::Weighted).unwrap();
            let n = match c.get(&EtfId::new("E1")).unwrap() {
                Classification::Broad => 0,
                Classification::Binary(_) => 1,
                Classification::Weighted(ws) => ws.len(),
            };
            assert!(n >= last, "survivors shrank when lowering threshold");
            last = n;
        }
    }

    fn cap_tranches() -> TrancheSpec {
        TrancheSpec::new(
            vec![2e9, 10e9],
            vec![
                CategoryId::new("SmallCap"),
                CategoryId::new("MidCap"),
                CategoryId::new("LargeCap"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn boundary_value_falls_in_lower_tranche() {
        let spec = cap_tranches();
        assert_eq!(spec.label_of(2e9).as_str(), "SmallCap");
        assert_eq!(spec.label_of(2e9 + 1.0).as_str(), "MidCap");
    }

    #[test]
    fn value_above_all_boundaries_is_top_tranche() {
        let h = holdings(vec![("E1", "S1", 1.0)]);
        let values = [(SecurityId::new("S1"), 50e9)].into_iter().collect();
        let e = tranche_exposures(&h, &values, &cap_tranches()).unwrap();
        assert_eq!(e.w[(0, 0)], 0.0);
        assert_eq!(e.w[(0, 1)], 0.0);
        assert_eq!(e.w[(0, 2)], 1.0);
    }

    #[test]
    fn split_holdings_span_their_tranches() {
        let h = holdings(vec![("E1", "S1", 0.5), ("E1", "S2", 0.5)]);
        let values = [
            (SecurityId::new("S1"), 1e9),
            (SecurityId::new("S2"), 20e9),
        ]
        .into_iter()
        .collect();
        let e = tranche_exposures(&h, &values, &cap_tranches()).unwrap();
        assert_eq!(e.w[(0, 0)], 0.5);
        assert_eq!(e.w[(0, 1)], 0.0);
        assert_eq!(e.w[(0, 2)], 0.5);
    }

    #[test]
    fn tranches_partition_valued_securities() {
        let spec = cap_tranches();
        for value in [0.0, 1e9, 2e9, 2e9 + 1.0, 10e9, 10e9 + 1.0, 1e12] {
            let memberships = (0..spec.labels().len())
                .filter(|&k| spec.tranche_of(value) == k)
                .count();
            assert_eq!(memberships, 1);
        }
    }

    #[test]
    fn tranche_spec_validates_shape_and_order() {
        assert!(matches!(
            TrancheSpec::new(vec![2.0, 1.0], vec![
                CategoryId::new("a"),
                CategoryId::new("b"),
                CategoryId::new("c")
            ]),
            Err(ExposureError::BoundariesNotIncreasing)
        ));
        assert!(matches!(
            TrancheSpec::new(vec![1.0], vec![CategoryId::new("a")]),
            Err(ExposureError::LabelCount { .. })
        ));
    }
}
