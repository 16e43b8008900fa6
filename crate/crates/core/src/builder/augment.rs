//! Augmentation of a third-party single-level classification into a
//! 2-level taxonomy.

use std::collections::BTreeMap;

use crate::builder::{
    assign_na_categories, reclassify_small_categories, split_by_attribute,
    split_categories_by_assetclass, BuilderError, NaAssignment, ReclassReport, SplitOutcome,
    SplitReport,
};
use crate::ids::{CategoryId, EtfId};
use crate::panel::ReturnsPanel;
use crate::taxonomy::{LevelAssignment, Taxonomy, TaxonomyLevel};
use crate::types::{Etf, EtfAssetClass};

/// Default ADDV share threshold for splitting mixed categories.
pub const DEFAULT_VTILDE_STAR: f64 = 0.1;
/// Default smallest allowed category size.
pub const DEFAULT_N_STAR: usize = 3;
/// Default correlation window, clamped to the panel length.
pub const DEFAULT_RECLASS_WINDOW: usize = 252;

/// Optional attribute sub-split stage: split categories of one asset class
/// by an ETF attribute (for example bond categories by duration bucket).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSplitSpec {
    /// ETF attribute key (`duration_bucket`, `cap_tranche`, ...).
    pub attribute: String,
    /// Asset class whose members count toward the size gate.
    pub asset_class: EtfAssetClass,
    /// Minimum targeted members for a split; `None` uses the average
    /// category size `floor(N / K)`, at least 1.
    pub m_star: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    /// ADDV share threshold for splitting mixed categories.
    pub vtilde_star: f64,
    /// Smallest allowed category size.
    pub n_star: usize,
    /// Correlation window for reclassification; `None` uses the default
    /// clamped to the panel length.
    pub window: Option<usize>,
    pub attribute_split: Option<AttributeSplitSpec>,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            vtilde_star: DEFAULT_VTILDE_STAR,
            n_star: DEFAULT_N_STAR,
            window: None,
            attribute_split: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentResult {
    pub taxonomy: Taxonomy,
    pub na_assignments: Vec<NaAssignment>,
    pub class_split: SplitReport,
    pub attribute_split: Option<SplitReport>,
    pub reclass: ReclassReport,
    /// Build metadata: every parameter and every decision, one per line.
    pub metadata: Vec<String>,
}

impl AugmentResult {
    pub fn metadata_text(&self) -> String {
        let mut text = self.metadata.join("\n");
        text.push('\n');
        text
    }
}

/// Builds a 2-level taxonomy from per-ETF third-party categories:
///
/// 1. ETFs without a category are assigned by attribute matching;
/// 2. categories mixing asset classes are split (or kept under their
///    dominant class) by ADDV share;
/// 3. optionally, categories are further split by an ETF attribute;
/// 4. categories below the size minimum are emptied into their most
///    correlated same-class peers.
///
/// The resulting level-1 categories each map to exactly one asset class,
/// which forms the second level.
pub fn augment_thirdparty(
    etfs: &[Etf],
    panel: &ReturnsPanel,
    params: &AugmentParams,
) -> Result<AugmentResult, BuilderError> {
    let facts: BTreeMap<&EtfId, &Etf> = etfs.iter().map(|e| (&e.id, e)).collect();
    let class_of_etf = |e: &EtfId| {
        facts
            .get(e)
            .and_then(|f| f.asset_class)
            .unwrap_or(EtfAssetClass::MultiAsset)
    };
    let addv_of = |e: &EtfId| facts.get(e).and_then(|f| f.addv).unwrap_or(0.0);
    let attribute_of =
        |e: &EtfId, key: &str| facts.get(e).and_then(|f| f.attribute(key)).map(str::to_owned);

    let mut classified: BTreeMap<EtfId, CategoryId> = BTreeMap::new();
    let mut unclassified: Vec<EtfId> = Vec::new();
    for etf in etfs {
        match &etf.thirdparty_category {
            Some(category) => {
                classified.insert(etf.id.clone(), category.clone());
            }
            None => unclassified.push(etf.id.clone()),
        }
    }
    if classified.is_empty() {
        return Err(BuilderError::NoClassifiedEtfs);
    }

    let mut metadata = vec![
        format!("param vtilde_star={}", params.vtilde_star),
        format!("param n_star={}", params.n_star),
    ];
    let window = params
        .window
        .unwrap_or_else(|| DEFAULT_RECLASS_WINDOW.min(panel.n_dates()));
    metadata.push(format!("param window={window}"));
    if let Some(spec) = &params.attribute_split {
        metadata.push(format!(
            "param split_attribute={} split_class={}",
            spec.attribute, spec.asset_class
        ));
    }

    let (na_map, na_assignments) =
        assign_na_categories(&unclassified, &classified, attribute_of, class_of_etf);
    let mut assignment = classified;
    assignment.extend(na_map);
    for entry in &na_assignments {
        metadata.push(format!("na-assign {entry}"));
    }

    let class_split = split_categories_by_assetclass(
        &assignment,
        class_of_etf,
        addv_of,
        params.vtilde_star,
    );
    assignment = class_split.assignment;
    let mut class_of = class_split.class_of;
    for line in class_split.report.lines() {
        metadata.push(format!("class-split {line}"));
    }

    let attribute_split = match &params.attribute_split {
        Some(spec) => {
            let n = assignment.len();
            let k = assignment
                .values()
                .collect::<std::collections::BTreeSet<_>>()
                .len();
            let m_star = spec.m_star.unwrap_or_else(|| (n / k.max(1)).max(1));
            metadata.push(format!("param m_star={m_star}"));
            let (split_assignment, report) = split_by_attribute(
                &assignment,
                |e| attribute_of(e, &spec.attribute),
                |e| class_of_etf(e) == spec.asset_class,
                addv_of,
                params.vtilde_star,
                m_star,
            );
            // subcategories stay in their source category's asset class
            for decision in &report.decisions {
                if decision.outcome == SplitOutcome::Split {
                    let class = class_of[&decision.category].clone();
                    for child in &decision.resulting {
                        class_of.insert(child.clone(), class.clone());
                    }
                }
            }
            assignment = split_assignment;
            for line in report.lines() {
                metadata.push(format!("attribute-split {line}"));
            }
            Some(report)
        }
        None => None,
    };

    let reclassified =
        reclassify_small_categories(&assignment, &class_of, panel, params.n_star, window)?;
    for line in reclassified.report.lines() {
        metadata.push(format!("reclass {line}"));
    }
    let assignment = reclassified.assignment;
    let class_of = reclassified.class_of;

    let mut level1_categories: Vec<CategoryId> = class_of.keys().cloned().collect();
    level1_categories.sort();
    let mut level2_categories: Vec<CategoryId> = class_of
        .values()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    level2_categories.sort();
    let level2_assignment: BTreeMap<EtfId, CategoryId> = assignment
        .iter()
        .map(|(e, c)| (e.clone(), class_of[c].clone()))
        .collect();
    let taxonomy = Taxonomy::new(vec![
        TaxonomyLevel {
            categories: level1_categories,
            assignment: LevelAssignment::Binary(assignment),
            parent_map: Some(class_of),
        },
        TaxonomyLevel {
            categories: level2_categories,
            assignment: LevelAssignment::Binary(level2_assignment),
            parent_map: None,
        },
    ])?;

    Ok(AugmentResult {
        taxonomy,
        na_assignments,
        class_split: class_split.report,
        attribute_split,
        reclass: reclassified.report,
        metadata,
    })
}
