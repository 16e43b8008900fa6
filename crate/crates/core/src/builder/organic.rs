//! Organic bottom-up taxonomy construction from holdings and constituent
//! attributes.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use crate::attributes::{
    average_credit_rating, average_duration, default_duration_buckets, RatingMethod, RatingTable,
    RatingTables,
};
use crate::builder::{assign_na_categories, other_category, BuilderError, NaAssignment};
use crate::exposure::{
    compute_exposures, threshold_exposures_with, tranche_exposures, Classification,
    ExposureError, ExposureMatrix, ThresholdMode, ThresholdedClassification, TrancheSpec,
    DEFAULT_MIN_COVERAGE, THRESHOLD_GUARD,
};
use crate::ids::{CategoryId, EtfId, SecurityId};
use crate::ingest::Universe;
use crate::taxonomy::{LevelAssignment, Taxonomy, TaxonomyLevel};
use crate::types::{AssetClass, Etf, EtfAssetClass, Security};

/// Default sector size above which an industry split is attempted.
pub const DEFAULT_N_UPPER: usize = 30;
/// Default smallest viable group size for an industry split.
pub const DEFAULT_N_LOWER: usize = 3;

/// Market-cap tranches at 2B and 10B.
pub fn default_cap_tranches() -> TrancheSpec {
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

#[derive(Debug, Clone)]
pub struct OrganicParams {
    /// Exposure threshold for classification stages.
    pub wstar: f64,
    /// Sector size above which an industry split is attempted.
    pub n_upper: usize,
    /// Smallest viable group size for an industry split.
    pub n_lower: usize,
    /// Binary levels everywhere, or thresholded weight sets on level 1.
    pub mode: ThresholdMode,
    pub cap_tranches: TrancheSpec,
    pub duration_buckets: TrancheSpec,
    pub rating_tables: RatingTables,
    pub rating_method: RatingMethod,
}

impl Default for OrganicParams {
    fn default() -> Self {
        Self {
            wstar: 0.5 + THRESHOLD_GUARD,
            n_upper: DEFAULT_N_UPPER,
            n_lower: DEFAULT_N_LOWER,
            mode: ThresholdMode::Binary,
            cap_tranches: default_cap_tranches(),
            duration_buckets: default_duration_buckets(),
            rating_tables: RatingTables {
                linear: RatingTable::twenty_one_notch_linear(),
                default_rate: RatingTable::sample_default_rates(),
            },
            rating_method: RatingMethod::LinearScore,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrganicResult {
    pub taxonomy: Taxonomy,
    /// Thresholding outcome of the constituent-derived asset class stage.
    pub class_assignments: ThresholdedClassification,
    /// Fallback assignments for ETFs with no holdings and no recorded class.
    pub na_assignments: Vec<NaAssignment>,
    /// Build metadata: parameters and structural decisions, one per line.
    pub metadata: Vec<String>,
}

type SecMap<'a> = BTreeMap<&'a SecurityId, &'a Security>;

/// Tracks which asset class owns each level-1 category id. When two classes
/// independently produce the same id, the later one gets a class-prefixed
/// name so every category keeps a single parent.
struct CategoryMinter {
    owner: BTreeMap<CategoryId, EtfAssetClass>,
}

impl CategoryMinter {
    fn new() -> Self {
        Self {
            owner: BTreeMap::new(),
        }
    }

    fn mint(&mut self, raw: CategoryId, class: EtfAssetClass) -> CategoryId {
        match self.owner.get(&raw) {
            None => {
                self.owner.insert(raw.clone(), class);
                raw
            }
            Some(c) if *c == class => raw,
            Some(_) => {
                let prefixed = CategoryId::new(format!("{}/{}", class.name(), raw.as_str()));
                self.owner.entry(prefixed.clone()).or_insert(class);
                prefixed
            }
        }
    }
}

/// Builds a 2-level taxonomy from the bottom up:
///
/// * level 2 is the constituent-derived asset class (diversified holdings
///   map to `MultiAsset`);
/// * level 1 classifies each class by its natural attribute: equity by
///   sector (recursing into industries for sectors above `n_upper` when the
///   split does not leave most groups below `n_lower`), bond by bond type,
///   commodity by commodity category, everything else by region;
/// * diversified ETFs fall through per-class cascades (equity: cap tranche,
///   style, region; bond: coarse credit group, duration bucket) and end in
///   `"{Class} - Broad"` or `"{Class} - Other"`.
///
/// ETFs with no holdings at all get `"{Class} - Other"` when their recorded
/// class is known and are otherwise assigned by fund-attribute matching.
pub fn build_organic_taxonomy(
    universe: &Universe,
    params: &OrganicParams,
) -> Result<OrganicResult, BuilderError> {
    let securities: SecMap = universe.securities.iter().map(|s| (&s.id, s)).collect();
    let class_threshold = params.wstar.max(0.5 + THRESHOLD_GUARD);

    let mut metadata = vec![
        format!("param wstar={}", params.wstar),
        format!("param n_upper={}", params.n_upper),
        format!("param n_lower={}", params.n_lower),
        format!(
            "param mode={}",
            match params.mode {
                ThresholdMode::Binary => "binary",
                ThresholdMode::Weighted => "weighted",
            }
        ),
    ];

    // asset class from constituents; always a single class or MultiAsset
    let class_exposures = compute_exposures(&universe.holdings, |s| {
        securities
            .get(s)
            .map(|sec| vec![(CategoryId::new(sec.asset_class.name()), 1.0)])
    })?;
    let class_assignments = threshold_exposures_with(
        &class_exposures,
        class_threshold,
        ThresholdMode::Binary,
        DEFAULT_MIN_COVERAGE,
    )?;

    let mut class_of: BTreeMap<EtfId, EtfAssetClass> = BTreeMap::new();
    let mut no_holdings_known: Vec<(EtfId, EtfAssetClass)> = Vec::new();
    let mut no_holdings_unknown: Vec<EtfId> = Vec::new();
    for etf in &universe.etfs {
        match class_assignments.get(&etf.id) {
            Some(Classification::Binary(c)) => {
                let class = AssetClass::from_str(c.as_str())
                    .map(EtfAssetClass::Single)
                    .unwrap_or(EtfAssetClass::MultiAsset);
                class_of.insert(etf.id.clone(), class);
            }
            Some(_) => {
                class_of.insert(etf.id.clone(), EtfAssetClass::MultiAsset);
            }
            None => match etf.asset_class {
                Some(class) => no_holdings_known.push((etf.id.clone(), class)),
                None => no_holdings_unknown.push(etf.id.clone()),
            },
        }
    }

    let mut groups: BTreeMap<EtfAssetClass, Vec<EtfId>> = BTreeMap::new();
    for (etf, class) in &class_of {
        groups.entry(*class).or_default().push(etf.clone());
    }

    let mut minter = CategoryMinter::new();
    let mut cells: BTreeMap<EtfId, Classification> = BTreeMap::new();
    let class_order: Vec<EtfAssetClass> = AssetClass::ALL
        .iter()
        .map(|c| EtfAssetClass::Single(*c))
        .chain([EtfAssetClass::MultiAsset])
        .collect();
    for class in class_order {
        let Some(group) = groups.get(&class) else {
            continue;
        };
        match class {
            EtfAssetClass::Single(AssetClass::Equity) => classify_equity(
                group,
                universe,
                &securities,
                params,
                &mut minter,
                &mut cells,
                &mut metadata,
            )?,
            EtfAssetClass::Single(AssetClass::Bond) => classify_bond(
                group,
                universe,
                &securities,
                params,
                &mut minter,
                &mut cells,
            )?,
            EtfAssetClass::Single(AssetClass::Commodity) => classify_commodity(
                group,
                universe,
                &securities,
                params,
                &mut minter,
                &mut cells,
            )?,
            other => classify_by_region(
                group,
                other,
                universe,
                &securities,
                params,
                &mut minter,
                &mut cells,
            )?,
        }
    }

    for (etf, class) in no_holdings_known {
        let category = minter.mint(other_category(&class.category_id()), class);
        metadata.push(format!("no-holdings {etf} assigned {category}"));
        cells.insert(etf.clone(), Classification::Binary(category));
        class_of.insert(etf, class);
    }
    let mut na_assignments = Vec::new();
    if !no_holdings_unknown.is_empty() {
        let snapshot: BTreeMap<EtfId, CategoryId> = cells
            .iter()
            .filter_map(|(e, c)| match c {
                Classification::Binary(cat) => Some((e.clone(), cat.clone())),
                _ => None,
            })
            .collect();
        let facts: BTreeMap<&EtfId, &Etf> = universe.etfs.iter().map(|e| (&e.id, e)).collect();
        let (assigned, reports) = assign_na_categories(
            &no_holdings_unknown,
            &snapshot,
            |e, key| facts.get(e).and_then(|f| f.attribute(key)).map(str::to_owned),
            |_| EtfAssetClass::MultiAsset,
        );
        for entry in &reports {
            metadata.push(format!("na-assign {entry}"));
        }
        for (etf, category) in assigned {
            let class = minter
                .owner
                .get(&category)
                .copied()
                .unwrap_or(EtfAssetClass::MultiAsset);
            let category = minter.mint(category, class);
            cells.insert(etf.clone(), Classification::Binary(category));
            class_of.insert(etf, class);
        }
        na_assignments = reports;
    }

    let categories: BTreeSet<CategoryId> = cells
        .values()
        .flat_map(|c| match c {
            Classification::Binary(cat) => vec![cat.clone()],
            Classification::Weighted(ws) => ws.iter().map(|(cat, _)| cat.clone()).collect(),
            Classification::Broad => vec![],
        })
        .collect();
    let parent_map: BTreeMap<CategoryId, CategoryId> = categories
        .iter()
        .map(|c| (c.clone(), minter.owner[c].category_id()))
        .collect();
    let level1_assignment = match params.mode {
        ThresholdMode::Binary => LevelAssignment::Binary(
            cells
                .iter()
                .map(|(e, c)| match c {
                    Classification::Binary(cat) => (e.clone(), cat.clone()),
                    // weighted cells only arise in weighted mode
                    _ => unreachable!("non-binary cell in binary mode"),
                })
                .collect(),
        ),
        ThresholdMode::Weighted => LevelAssignment::Weighted(
            cells
                .iter()
                .map(|(e, c)| {
                    let ws = match c {
                        Classification::Binary(cat) => vec![(cat.clone(), 1.0)],
                        Classification::Weighted(ws) => ws.clone(),
                        Classification::Broad => vec![],
                    };
                    (e.clone(), ws)
                })
                .collect(),
        ),
    };
    let level2_assignment: BTreeMap<EtfId, CategoryId> = class_of
        .iter()
        .map(|(e, c)| (e.clone(), c.category_id()))
        .collect();
    let level2_categories: Vec<CategoryId> = class_of
        .values()
        .map(|c| c.category_id())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let taxonomy = Taxonomy::new(vec![
        TaxonomyLevel {
            categories: categories.into_iter().collect(),
            assignment: level1_assignment,
            parent_map: Some(parent_map),
        },
        TaxonomyLevel {
            categories: level2_categories,
            assignment: LevelAssignment::Binary(level2_assignment),
            parent_map: None,
        },
    ])?;

    Ok(OrganicResult {
        taxonomy,
        class_assignments,
        na_assignments,
        metadata,
    })
}

/// Sector-style exposures for one asset class at the given path depth,
/// optionally restricted to paths under one parent sector. Constituents of
/// other classes carry no attribute here, so they reduce coverage instead
/// of polluting the category axis.
fn sector_exposures(
    universe: &Universe,
    securities: &SecMap,
    class: AssetClass,
    depth: usize,
    under: Option<&CategoryId>,
) -> Result<ExposureMatrix, ExposureError> {
    let prefix = under.map(|c| format!("{}/", c.as_str()));
    compute_exposures(&universe.holdings, |s| {
        let sec = securities.get(s)?;
        if sec.asset_class != class {
            return None;
        }
        let mut cats = sec.sector_at_depth(depth);
        if let Some(p) = &prefix {
            cats.retain(|(c, _)| c.as_str().starts_with(p.as_str()));
        }
        Some(cats)
    })
}

/// Categorical fund-through exposures (style, region) with an optional
/// constituent class filter.
fn attribute_exposures(
    universe: &Universe,
    securities: &SecMap,
    class_filter: Option<AssetClass>,
    value: impl Fn(&Security) -> Option<String>,
) -> Result<ExposureMatrix, ExposureError> {
    compute_exposures(&universe.holdings, |s| {
        let sec = securities.get(s)?;
        if class_filter.is_some_and(|c| sec.asset_class != c) {
            return None;
        }
        value(sec).map(|v| vec![(CategoryId::new(v), 1.0)])
    })
}

fn values_map(
    securities: &SecMap,
    class: AssetClass,
    value: impl Fn(&Security) -> Option<f64>,
) -> BTreeMap<SecurityId, f64> {
    securities
        .values()
        .filter(|s| s.asset_class == class)
        .filter_map(|s| value(s).map(|v| (s.id.clone(), v)))
        .collect()
}

/// Splits one class's members into definite-sector groups and a broad
/// remainder; multi-sector weight sets (weighted mode) become cells
/// directly.
fn sector_partition(
    group: &[EtfId],
    classified: &ThresholdedClassification,
    class: EtfAssetClass,
    minter: &mut CategoryMinter,
    cells: &mut BTreeMap<EtfId, Classification>,
) -> (BTreeMap<CategoryId, Vec<EtfId>>, Vec<EtfId>) {
    let mut by_sector: BTreeMap<CategoryId, Vec<EtfId>> = BTreeMap::new();
    let mut broad = Vec::new();
    for etf in group {
        match classified.definite(etf) {
            Some(c) => by_sector.entry(c.clone()).or_default().push(etf.clone()),
            None => match classified.get(etf) {
                Some(Classification::Weighted(ws)) if ws.len() > 1 => {
                    let minted = ws
                        .iter()
                        .map(|(c, w)| (minter.mint(c.clone(), class), *w))
                        .collect();
                    cells.insert(etf.clone(), Classification::Weighted(minted));
                }
                _ => broad.push(etf.clone()),
            },
        }
    }
    (by_sector, broad)
}

#[allow(clippy::too_many_arguments)]
fn classify_equity(
    group: &[EtfId],
    universe: &Universe,
    securities: &SecMap,
    params: &OrganicParams,
    minter: &mut CategoryMinter,
    cells: &mut BTreeMap<EtfId, Classification>,
    metadata: &mut Vec<String>,
) -> Result<(), BuilderError> {
    let class = EtfAssetClass::Single(AssetClass::Equity);
    let sectors = sector_exposures(universe, securities, AssetClass::Equity, 0, None)?;
    let sectored = threshold_exposures_with(
        &sectors,
        params.wstar,
        params.mode,
        DEFAULT_MIN_COVERAGE,
    )?;
    let (by_sector, broad) = sector_partition(group, &sectored, class, minter, cells);

    for (sector, members) in &by_sector {
        if members.len() > params.n_upper {
            let industries =
                sector_exposures(universe, securities, AssetClass::Equity, 1, Some(sector))?;
            let classified = threshold_exposures_with(
                &industries,
                params.wstar,
                params.mode,
                DEFAULT_MIN_COVERAGE,
            )?;
            let mut industry_groups: BTreeMap<CategoryId, Vec<&EtfId>> = BTreeMap::new();
            let mut residual: Vec<&EtfId> = Vec::new();
            for etf in members {
                match classified.definite(etf) {
                    Some(ind) => industry_groups.entry(ind.clone()).or_default().push(etf),
                    None => residual.push(etf),
                }
            }
            let mut sizes: Vec<usize> = industry_groups.values().map(|g| g.len()).collect();
            if !residual.is_empty() {
                sizes.push(residual.len());
            }
            let small = sizes.iter().filter(|&&n| n < params.n_lower).count();
            // reject only when small groups form a strict majority
            if !industry_groups.is_empty() && small * 2 <= sizes.len() {
                metadata.push(format!(
                    "sector {sector} ({} members) split into {} industry groups",
                    members.len(),
                    sizes.len()
                ));
                for (industry, g) in industry_groups {
                    let category = minter.mint(industry, class);
                    for etf in g {
                        cells.insert(etf.clone(), Classification::Binary(category.clone()));
                    }
                }
                if !residual.is_empty() {
                    let category = minter.mint(sector.clone(), class);
                    for etf in residual {
                        cells.insert(etf.clone(), Classification::Binary(category.clone()));
                    }
                }
                continue;
            }
            metadata.push(format!(
                "sector {sector} kept whole: {small} of {} industry groups below {}",
                sizes.len(),
                params.n_lower
            ));
        }
        let category = minter.mint(sector.clone(), class);
        for etf in members {
            cells.insert(etf.clone(), Classification::Binary(category.clone()));
        }
    }

    if !broad.is_empty() {
        let cascade_threshold = params.wstar.max(0.5 + THRESHOLD_GUARD);
        let caps = values_map(securities, AssetClass::Equity, |s| s.market_cap);
        let cap_exposures =
            tranche_exposures(&universe.holdings, &caps, &params.cap_tranches)?;
        let by_cap = threshold_exposures_with(
            &cap_exposures,
            cascade_threshold,
            ThresholdMode::Binary,
            DEFAULT_MIN_COVERAGE,
        )?;
        let styles = attribute_exposures(universe, securities, Some(AssetClass::Equity), |s| {
            s.style.map(|v| v.name().to_owned())
        })?;
        let by_style = threshold_exposures_with(
            &styles,
            cascade_threshold,
            ThresholdMode::Binary,
            DEFAULT_MIN_COVERAGE,
        )?;
        let regions = attribute_exposures(universe, securities, Some(AssetClass::Equity), |s| {
            s.region.clone()
        })?;
        let by_region = threshold_exposures_with(
            &regions,
            cascade_threshold,
            ThresholdMode::Binary,
            DEFAULT_MIN_COVERAGE,
        )?;
        for etf in broad {
            let label = by_cap
                .definite(&etf)
                .or_else(|| by_style.definite(&etf))
                .or_else(|| by_region.definite(&etf));
            let category = match label {
                Some(l) => minter.mint(CategoryId::new(format!("Equity - {l}")), class),
                None => minter.mint(CategoryId::new("Equity - Broad"), class),
            };
            cells.insert(etf, Classification::Binary(category));
        }
    }
    Ok(())
}

fn classify_bond(
    group: &[EtfId],
    universe: &Universe,
    securities: &SecMap,
    params: &OrganicParams,
    minter: &mut CategoryMinter,
    cells: &mut BTreeMap<EtfId, Classification>,
) -> Result<(), BuilderError> {
    let class = EtfAssetClass::Single(AssetClass::Bond);
    let types = sector_exposures(universe, securities, AssetClass::Bond, 0, None)?;
    let typed = threshold_exposures_with(
        &types,
        params.wstar,
        params.mode,
        DEFAULT_MIN_COVERAGE,
    )?;
    let (by_type, broad) = sector_partition(group, &typed, class, minter, cells);
    for (bond_type, members) in by_type {
        let category = minter.mint(bond_type, class);
        for etf in members {
            cells.insert(etf, Classification::Binary(category.clone()));
        }
    }

    if !broad.is_empty() {
        let ratings: BTreeMap<SecurityId, String> = securities
            .values()
            .filter(|s| s.asset_class == AssetClass::Bond)
            .filter_map(|s| s.credit_rating.clone().map(|r| (s.id.clone(), r)))
            .collect();
        let rated = average_credit_rating(
            &universe.holdings,
            &ratings,
            params.rating_method,
            &params.rating_tables,
        )?;
        let durations = values_map(securities, AssetClass::Bond, |s| s.duration_years);
        let duration_summary = average_duration(
            &universe.holdings,
            &durations,
            &params.duration_buckets,
            params.wstar.max(0.5 + THRESHOLD_GUARD),
        )?;
        for etf in broad {
            let coarse = rated
                .etf_ids
                .iter()
                .position(|e| *e == etf)
                .and_then(|i| rated.coarse[i]);
            let category = if let Some(c) = coarse {
                minter.mint(CategoryId::new(format!("Bond - {}", c.name())), class)
            } else if let Some(bucket) = duration_summary.classification.definite(&etf) {
                minter.mint(CategoryId::new(format!("Bond - {bucket}")), class)
            } else {
                minter.mint(CategoryId::new("Bond - Broad"), class)
            };
            cells.insert(etf, Classification::Binary(category));
        }
    }
    Ok(())
}

fn classify_commodity(
    group: &[EtfId],
    universe: &Universe,
    securities: &SecMap,
    params: &OrganicParams,
    minter: &mut CategoryMinter,
    cells: &mut BTreeMap<EtfId, Classification>,
) -> Result<(), BuilderError> {
    let class = EtfAssetClass::Single(AssetClass::Commodity);
    let sectors = sector_exposures(universe, securities, AssetClass::Commodity, 0, None)?;
    let sectored = threshold_exposures_with(
        &sectors,
        params.wstar,
        params.mode,
        DEFAULT_MIN_COVERAGE,
    )?;
    let (by_sector, broad) = sector_partition(group, &sectored, class, minter, cells);
    for (sector, members) in by_sector {
        let category = minter.mint(sector, class);
        for etf in members {
            cells.insert(etf, Classification::Binary(category.clone()));
        }
    }
    for etf in broad {
        let category = minter.mint(CategoryId::new("Commodity - Broad"), class);
        cells.insert(etf, Classification::Binary(category));
    }
    Ok(())
}

/// Region classification for currency, real estate, volatility, other, and
/// multi-asset ETFs. Multi-asset regions aggregate over all constituents.
#[allow(clippy::too_many_arguments)]
fn classify_by_region(
    group: &[EtfId],
    class: EtfAssetClass,
    universe: &Universe,
    securities: &SecMap,
    params: &OrganicParams,
    minter: &mut CategoryMinter,
    cells: &mut BTreeMap<EtfId, Classification>,
) -> Result<(), BuilderError> {
    let class_filter = match class {
        EtfAssetClass::Single(c) => Some(c),
        EtfAssetClass::MultiAsset => None,
    };
    let regions = attribute_exposures(universe, securities, class_filter, |s| s.region.clone())?;
    let by_region = threshold_exposures_with(
        &regions,
        params.wstar.max(0.5 + THRESHOLD_GUARD),
        ThresholdMode::Binary,
        DEFAULT_MIN_COVERAGE,
    )?;
    for etf in group {
        let category = match by_region.definite(etf) {
            Some(r) => minter.mint(CategoryId::new(format!("{} - {r}", class.name())), class),
            None => minter.mint(other_category(&class.category_id()), class),
        };
        cells.insert(etf.clone(), Classification::Binary(category));
    }
    Ok(())
}
