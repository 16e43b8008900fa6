//! ETF-level scalar attributes aggregated from constituents: market cap
//! factors, average credit ratings (with configurable score or default-rate
//! tables), and average durations with bucket classification.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::exposure::{
    threshold_exposures_with, tranche_exposures, ExposureError, ExposureMatrix,
    ThresholdMode, ThresholdedClassification, TrancheSpec, DEFAULT_MIN_COVERAGE,
};
use crate::holdings::HoldingsTable;
use crate::ids::{CategoryId, EtfId, SecurityId};

/// Classification label for ETFs whose duration buckets are diversified.
pub const ALL_DURATION: &str = "all-duration";

#[derive(Debug, Error)]
pub enum AttributeError {
    #[error("security {security}: market cap {value} is not positive")]
    NonPositiveCap { security: SecurityId, value: f64 },
    #[error("security {security}: duration {value} is negative")]
    NegativeDuration { security: SecurityId, value: f64 },
    #[error("security {security}: rating `{rating}` is not in the rating table")]
    UnknownRating {
        security: SecurityId,
        rating: String,
    },
    #[error("rating table: {0}")]
    BadTable(String),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
}

/// Per-ETF market cap factors: the weighted cap `C_i = Σ ω_ia C_a` and its
/// log counterpart `Σ ω_ia ln(C_a)`. Constituents without caps are omitted
/// from both sums without renormalizing; `coverage` reports the omitted
/// fraction.
#[derive(Debug, Clone, PartialEq)]
pub struct CapFactors {
    pub etf_ids: Vec<EtfId>,
    pub linear: Vec<f64>,
    pub log: Vec<f64>,
    pub coverage: Vec<f64>,
}

pub fn cap_factor(
    holdings: &HoldingsTable,
    caps: &BTreeMap<SecurityId, f64>,
) -> Result<CapFactors, AttributeError> {
    for (security, cap) in caps {
        if *cap <= 0.0 {
            return Err(AttributeError::NonPositiveCap {
                security: security.clone(),
                value: *cap,
            });
        }
    }
    let etf_ids: Vec<EtfId> = holdings.etfs().cloned().collect();
    let mut linear = vec![0.0; etf_ids.len()];
    let mut log = vec![0.0; etf_ids.len()];
    let mut coverage = vec![0.0; etf_ids.len()];
    for (i, etf) in etf_ids.iter().enumerate() {
        for (security, omega) in holdings.row(etf).unwrap_or(&[]) {
            if let Some(cap) = caps.get(security) {
                linear[i] += omega * cap;
                log[i] += omega * cap.ln();
                coverage[i] += omega;
            }
        }
    }
    Ok(CapFactors {
        etf_ids,
        linear,
        log,
        coverage,
    })
}

/// Investment-grade versus high-yield, the coarse two-notch scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseRating {
    InvestmentGrade,
    HighYield,
}

impl CoarseRating {
    pub fn name(self) -> &'static str {
        match self {
            CoarseRating::InvestmentGrade => "InvestmentGrade",
            CoarseRating::HighYield => "HighYield",
        }
    }
}

/// Rating labels ordered best to worst, each with a numeric value
/// (strictly increasing toward worse credit). The first `ig_count` labels
/// are investment grade; the rest are high yield.
///
/// Only the numeric values drive averaging and nearest-label mapping, so
/// outcomes are invariant under renaming labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    labels: Vec<String>,
    values: Vec<f64>,
    ig_count: usize,
}

impl RatingTable {
    pub fn new(
        pairs: Vec<(String, f64)>,
        ig_count: usize,
    ) -> Result<Self, AttributeError> {
        if pairs.is_empty() {
            return Err(AttributeError::BadTable("table is empty".to_owned()));
        }
        if ig_count > pairs.len() {
            return Err(AttributeError::BadTable(format!(
                "investment-grade count {ig_count} exceeds {} labels",
                pairs.len()
            )));
        }
        let (labels, values): (Vec<String>, Vec<f64>) = pairs.into_iter().unzip();
        if values.windows(2).any(|p| p[0] >= p[1]) {
            return Err(AttributeError::BadTable(
                "values must strictly increase from best to worst".to_owned(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for label in &labels {
            if !seen.insert(label.clone()) {
                return Err(AttributeError::BadTable(format!(
                    "duplicate label `{label}`"
                )));
            }
        }
        Ok(Self {
            labels,
            values,
            ig_count,
        })
    }

    /// Seven-notch scale AAA..CCC scored 1..7; investment grade through BBB.
    pub fn seven_notch_linear() -> Self {
        let labels = ["AAA", "AA", "A", "BBB", "BB", "B", "CCC"];
        Self::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| ((*l).to_owned(), (i + 1) as f64))
                .collect(),
            4,
        )
        .unwrap()
    }

    /// Full 21-notch agency scale AAA..C scored 1..21; investment grade
    /// through BBB-.
    pub fn twenty_one_notch_linear() -> Self {
        let labels = [
            "AAA", "AA+", "AA", "AA-", "A+", "A", "A-", "BBB+", "BBB", "BBB-", "BB+", "BB",
            "BB-", "B+", "B", "B-", "CCC+", "CCC", "CCC-", "CC", "C",
        ];
        Self::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| ((*l).to_owned(), (i + 1) as f64))
                .collect(),
            10,
        )
        .unwrap()
    }

    /// Sample historical default rates in percent, for tests and demos
    /// only. Not sourced from any rating agency publication; production use
    /// requires configuring a real table.
    pub fn sample_default_rates() -> Self {
        Self::new(
            [
                ("AAA", 0.01),
                ("AA", 0.02),
                ("A", 0.06),
                ("BBB", 0.20),
                ("BB", 0.80),
                ("B", 4.0),
                ("CCC", 25.0),
            ]
            .into_iter()
            .map(|(l, v)| (l.to_owned(), v))
            .collect(),
            4,
        )
        .unwrap()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn value_of(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.values[i])
    }

    /// Index of the label whose value is closest to `score`; ties resolve
    /// to the better (lower-value) rating.
    pub fn nearest_index(&self, score: f64) -> usize {
        let mut best = 0;
        let mut best_dist = (self.values[0] - score).abs();
        for (i, value) in self.values.iter().enumerate().skip(1) {
            let dist = (value - score).abs();
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        best
    }

    pub fn label_at(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn coarse_at(&self, index: usize) -> CoarseRating {
        if index < self.ig_count {
            CoarseRating::InvestmentGrade
        } else {
            CoarseRating::HighYield
        }
    }

    /// Coarse grade of a known label, for building IG/HY exposures.
    pub fn coarse_of(&self, label: &str) -> Option<CoarseRating> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.coarse_at(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingMethod {
    /// Average the configured rating scores directly.
    LinearScore,
    /// Average default rates, then map back to the nearest rating.
    DefaultRate,
}

/// Score and default-rate tables used by [`average_credit_rating`]. There is
/// deliberately no default: the default-rate table is a configuration input.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTables {
    pub linear: RatingTable,
    pub default_rate: RatingTable,
}

/// Per-ETF average ratings; entries are `None` for ETFs with no rated
/// constituents. `coverage` is the holdings weight carrying a rating; the
/// average is taken over that covered weight.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingAverages {
    pub etf_ids: Vec<EtfId>,
    pub scores: Vec<Option<f64>>,
    pub labels: Vec<Option<String>>,
    pub coarse: Vec<Option<CoarseRating>>,
    pub coverage: Vec<f64>,
}

impl RatingAverages {
    pub fn label_of(&self, etf: &EtfId) -> Option<&str> {
        let i = self.etf_ids.iter().position(|e| e == etf)?;
        self.labels[i].as_deref()
    }
}

pub fn average_credit_rating(
    holdings: &HoldingsTable,
    ratings: &BTreeMap<SecurityId, String>,
    method: RatingMethod,
    tables: &RatingTables,
) -> Result<RatingAverages, AttributeError> {
    let table = match method {
        RatingMethod::LinearScore => &tables.linear,
        RatingMethod::DefaultRate => &tables.default_rate,
    };
    let etf_ids: Vec<EtfId> = holdings.etfs().cloned().collect();
    let mut scores = Vec::with_capacity(etf_ids.len());
    let mut labels = Vec::with_capacity(etf_ids.len());
    let mut coarse = Vec::with_capacity(etf_ids.len());
    let mut coverage = Vec::with_capacity(etf_ids.len());
    for etf in &etf_ids {
        let mut weighted = 0.0;
        let mut covered = 0.0;
        for (security, omega) in holdings.row(etf).unwrap_or(&[]) {
            if let Some(rating) = ratings.get(security) {
                let value =
                    table
                        .value_of(rating)
                        .ok_or_else(|| AttributeError::UnknownRating {
                            security: security.clone(),
                            rating: rating.clone(),
                        })?;
                weighted += omega * value;
                covered += omega;
            }
        }
        if covered > 0.0 {
            let score = weighted / covered;
            let index = table.nearest_index(score);
            scores.push(Some(score));
            labels.push(Some(table.label_at(index).to_owned()));
            coarse.push(Some(table.coarse_at(index)));
        } else {
            scores.push(None);
            labels.push(None);
            coarse.push(None);
        }
        coverage.push(covered);
    }
    Ok(RatingAverages {
        etf_ids,
        scores,
        labels,
        coarse,
        coverage,
    })
}

/// Duration buckets at 1, 3, and 10 years.
pub fn default_duration_buckets() -> TrancheSpec {
    TrancheSpec::new(
        vec![1.0, 3.0, 10.0],
        vec![
            CategoryId::new("ultra-short"),
            CategoryId::new("short"),
            CategoryId::new("intermediate"),
            CategoryId::new("long"),
        ],
    )
    .unwrap()
}

/// Per-ETF average durations plus bucket exposures and their thresholded
/// classification. Averages are over covered weight; ETFs without any
/// duration-carrying constituent get `None`. A `Broad` classification means
/// the ETF spans buckets ([`ALL_DURATION`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DurationSummary {
    pub etf_ids: Vec<EtfId>,
    pub averages: Vec<Option<f64>>,
    pub coverage: Vec<f64>,
    pub buckets: ExposureMatrix,
    pub classification: ThresholdedClassification,
}

impl DurationSummary {
    /// Bucket label for one ETF: the definite bucket, or [`ALL_DURATION`]
    /// when diversified. `None` when the ETF is unknown.
    pub fn bucket_label(&self, etf: &EtfId) -> Option<String> {
        self.classification.get(etf).map(|c| {
            self.classification
                .definite(etf)
                .map(|c| c.to_string())
                .unwrap_or_else(|| {
                    debug_assert!(matches!(
                        c,
                        crate::exposure::Classification::Broad
                            | crate::exposure::Classification::Weighted(_)
                    ));
                    ALL_DURATION.to_owned()
                })
        })
    }
}

pub fn average_duration(
    holdings: &HoldingsTable,
    durations: &BTreeMap<SecurityId, f64>,
    buckets: &TrancheSpec,
    wstar: f64,
) -> Result<DurationSummary, AttributeError> {
    for (security, value) in durations {
        if *value < 0.0 {
            return Err(AttributeError::NegativeDuration {
                security: security.clone(),
                value: *value,
            });
        }
    }
    let etf_ids: Vec<EtfId> = holdings.etfs().cloned().collect();
    let mut averages = Vec::with_capacity(etf_ids.len());
    let mut coverage = Vec::with_capacity(etf_ids.len());
    for etf in &etf_ids {
        let mut weighted = 0.0;
        let mut covered = 0.0;
        for (security, omega) in holdings.row(etf).unwrap_or(&[]) {
            if let Some(duration) = durations.get(security) {
                weighted += omega * duration;
                covered += omega;
            }
        }
        averages.push((covered > 0.0).then_some(weighted / covered));
        coverage.push(covered);
    }
    let bucket_exposures = tranche_exposures(holdings, durations, buckets)?;
    let classification = threshold_exposures_with(
        &bucket_exposures,
        wstar,
        ThresholdMode::Weighted,
        DEFAULT_MIN_COVERAGE,
    )?;
    Ok(DurationSummary {
        etf_ids,
        averages,
        coverage,
        buckets: bucket_exposures,
        classification,
    })
}
