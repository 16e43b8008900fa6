//! Taxonomy assembly.
//!
//! Two entry points produce the 2-level taxonomies the model builders
//! consume:
//!
//! - [`build_organic_taxonomy`] derives both levels bottom-up from
//!   constituent holdings: asset classes from constituent asset classes,
//!   granular categories from constituent sector/type classifications, with
//!   attribute fallbacks (cap tranche, style, region, credit group,
//!   duration) for diversified funds.
//! - [`augment_thirdparty`] starts from a provider's single-level category
//!   per ETF and repairs it into a clean 2-level taxonomy: unclassified
//!   ETFs are assigned by attribute matching, mixed-class categories are
//!   split with dollar-volume gating, optional attribute sub-splits add
//!   granularity, and undersized categories are emptied into their most
//!   correlated peers.
//!
//! Every stage is deterministic: ties break on sorted ids, and reports list
//! decisions in sorted order.

mod assign;
mod augment;
mod averages;
mod organic;
mod reclass;
mod split;

pub use assign::{assign_na_categories, NaAssignment};
pub use augment::{
    augment_thirdparty, AttributeSplitSpec, AugmentParams, AugmentResult, DEFAULT_N_STAR,
    DEFAULT_RECLASS_WINDOW, DEFAULT_VTILDE_STAR,
};
pub use averages::{category_average_returns, CategoryAverages};
pub use organic::{
    build_organic_taxonomy, default_cap_tranches, OrganicParams, OrganicResult, DEFAULT_N_LOWER,
    DEFAULT_N_UPPER,
};
pub use reclass::{
    reclassify_small_categories, ReclassMove, ReclassReport, ReclassRule, Reclassified,
    MIN_CORRELATION_OVERLAP,
};
pub use split::{
    split_by_attribute, split_categories_by_assetclass, ClassSplit, SplitDecision, SplitOutcome,
    SplitReport,
};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::attributes::AttributeError;
use crate::exposure::{ExposureError, ExposureMatrix};
use crate::ids::CategoryId;
use crate::taxonomy::{LevelAssignment, TaxonomyError, TaxonomyLevel};

#[derive(Debug, Error)]
pub enum BuilderError {
    #[error("operation requires a binary level")]
    LevelNotBinary,
    #[error("correlation window {window} exceeds the {available} available dates")]
    WindowTooLong { window: usize, available: usize },
    #[error("correlation window must be at least 1")]
    ZeroWindow,
    #[error("category {0} has no asset class")]
    MissingClass(CategoryId),
    #[error("no ETF carries a third-party category")]
    NoClassifiedEtfs,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
    #[error(transparent)]
    Attribute(#[from] AttributeError),
}

/// Category id for the catch-all category of one asset class.
pub fn other_category(class: &CategoryId) -> CategoryId {
    CategoryId::new(format!("{class} - Other"))
}

/// Converts a taxonomy level into an exposure matrix: indicator rows for a
/// binary level, the stored weight sets for a weighted level. Rows are the
/// level's ETFs sorted by id; coverage is 1 throughout.
pub fn level_to_exposures(level: &TaxonomyLevel) -> Result<ExposureMatrix, ExposureError> {
    let etf_ids: Vec<_> = level.etf_ids().into_iter().collect();
    let mut categories = level.categories.clone();
    categories.sort();
    let index: std::collections::BTreeMap<&CategoryId, usize> =
        categories.iter().enumerate().map(|(a, c)| (c, a)).collect();
    let mut w = DMatrix::zeros(etf_ids.len(), categories.len());
    match &level.assignment {
        LevelAssignment::Binary(map) => {
            for (i, etf) in etf_ids.iter().enumerate() {
                w[(i, index[&map[etf]])] = 1.0;
            }
        }
        LevelAssignment::Weighted(map) => {
            for (i, etf) in etf_ids.iter().enumerate() {
                for (cat, weight) in &map[etf] {
                    w[(i, index[cat])] += *weight;
                }
            }
        }
    }
    let coverage = vec![1.0; etf_ids.len()];
    ExposureMatrix::new(etf_ids, categories, w, coverage)
}
