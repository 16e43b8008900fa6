//! Seeded synthetic universes with a planted block-factor structure.
//!
//! Returns follow `r_i = class_vol * g_c + category_vol * h_k + idio_vol * e_i`
//! with one shared factor per asset class, one factor per category, and
//! independent noise; `idio_vol = 0` plants exactly low-rank returns. Every
//! draw comes from one seeded generator in a fixed order, so a given spec
//! produces identical data on every run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::holdings::{HoldingsError, HoldingsTable};
use crate::ids::{CategoryId, EtfId, SecurityId};
use crate::ingest::Universe;
use crate::panel::{PanelError, ReturnsPanel};
use crate::taxonomy::{save_taxonomy, LevelAssignment, Taxonomy, TaxonomyError, TaxonomyLevel};
use crate::types::{AssetClass, Etf, EtfAssetClass, Security, Style};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("spec has no categories")]
    Empty,
    #[error("category name `{0}` is repeated")]
    DuplicateCategory(String),
    #[error("category `{0}` has no ETFs: more categories than ETFs")]
    Infeasible(String),
    #[error("category name `{0}` is empty or contains a separator character")]
    InvalidName(String),
    #[error("negative volatility {0}")]
    NegativeVol(f64),
    #[error("missing rate {0} outside [0, 1)")]
    BadMissingRate(f64),
    #[error("spec needs at least 2 dates, got {0}")]
    TooFewDates(usize),
    #[error("securities_per_category must be at least 1")]
    NoSecurities,
    #[error(transparent)]
    Holdings(#[from] HoldingsError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("writing {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

/// One planted category: its ETFs share an asset class and a return factor,
/// and its name doubles as the constituent sector.
#[derive(Debug, Clone)]
pub struct SynthCategory {
    pub name: String,
    pub asset_class: AssetClass,
    pub n_etfs: usize,
    /// Daily volatility of this category's own factor.
    pub category_vol: f64,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub categories: Vec<SynthCategory>,
    /// Daily volatility of the factor shared by all categories of one
    /// asset class.
    pub class_vol: f64,
    /// Idiosyncratic daily volatility; 0 plants exactly low-rank returns.
    pub idio_vol: f64,
    pub n_dates: usize,
    /// Probability that any single observation is masked as missing.
    pub missing_rate: f64,
    /// Securities minted per category; each ETF holds all of its
    /// category's securities with random weights summing to 1.
    pub securities_per_category: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            categories: Vec::new(),
            class_vol: 0.01,
            idio_vol: 0.005,
            n_dates: 252,
            missing_rate: 0.0,
            securities_per_category: 3,
            seed: 7,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.categories.is_empty() {
            return Err(SynthError::Empty);
        }
        let mut seen = BTreeSet::new();
        for cat in &self.categories {
            if cat.name.is_empty()
                || cat
                    .name
                    .contains(['\t', '\n', ',', ':', ';'])
            {
                return Err(SynthError::InvalidName(cat.name.clone()));
            }
            if !seen.insert(&cat.name) {
                return Err(SynthError::DuplicateCategory(cat.name.clone()));
            }
            if cat.n_etfs == 0 {
                return Err(SynthError::Infeasible(cat.name.clone()));
            }
            if cat.category_vol < 0.0 {
                return Err(SynthError::NegativeVol(cat.category_vol));
            }
        }
        if self.class_vol < 0.0 {
            return Err(SynthError::NegativeVol(self.class_vol));
        }
        if self.idio_vol < 0.0 {
            return Err(SynthError::NegativeVol(self.idio_vol));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(SynthError::BadMissingRate(self.missing_rate));
        }
        if self.n_dates < 2 {
            return Err(SynthError::TooFewDates(self.n_dates));
        }
        if self.securities_per_category == 0 {
            return Err(SynthError::NoSecurities);
        }
        Ok(())
    }
}

/// A generated universe plus the planted taxonomy it was drawn from.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub universe: Universe,
    pub taxonomy: Taxonomy,
}

/// First `n` weekdays starting 2020-01-06.
fn business_dates(n: usize) -> Vec<NaiveDate> {
    let mut dates = Vec::with_capacity(n);
    let mut day = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
    while dates.len() < n {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            dates.push(day);
        }
        day = day.succ_opt().unwrap();
    }
    dates
}

pub fn generate_synthetic_universe(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t = spec.n_dates;
    let styles = [Style::Growth, Style::Value, Style::Blend];
    let ratings = ["AA", "A", "BBB"];

    let mut etfs: Vec<Etf> = Vec::new();
    let mut securities: Vec<Security> = Vec::new();
    let mut holdings: Vec<(EtfId, SecurityId, f64)> = Vec::new();
    let mut level1: BTreeMap<EtfId, CategoryId> = BTreeMap::new();
    let mut level2: BTreeMap<EtfId, CategoryId> = BTreeMap::new();
    let mut parent_map: BTreeMap<CategoryId, CategoryId> = BTreeMap::new();
    let mut etf_category: Vec<usize> = Vec::new();

    let mut etf_idx = 0usize;
    let mut sec_idx = 0usize;
    for (k, cat) in spec.categories.iter().enumerate() {
        let category = CategoryId::new(&cat.name);
        let class = EtfAssetClass::Single(cat.asset_class).category_id();
        parent_map.insert(category.clone(), class.clone());

        let mut sec_ids = Vec::with_capacity(spec.securities_per_category);
        for j in 0..spec.securities_per_category {
            let id = SecurityId::new(format!("S{sec_idx:04}"));
            sec_idx += 1;
            let mut security = Security {
                id: id.clone(),
                asset_class: cat.asset_class,
                sector_weights: [(category.clone(), 1.0)].into_iter().collect(),
                market_cap: None,
                credit_rating: None,
                duration_years: None,
                style: None,
                region: Some("US".to_owned()),
            };
            match cat.asset_class {
                AssetClass::Equity => {
                    security.market_cap = Some(1e9 * (1.0 + 19.0 * rng.random::<f64>()));
                    security.style = Some(styles[j % styles.len()]);
                }
                AssetClass::Bond => {
                    security.credit_rating = Some(ratings[j % ratings.len()].to_owned());
                    security.duration_years = Some(1.0 + 9.0 * rng.random::<f64>());
                }
                _ => {}
            }
            securities.push(security);
            sec_ids.push(id);
        }

        for i in 0..cat.n_etfs {
            let id = EtfId::new(format!("E{etf_idx:04}"));
            etf_idx += 1;
            etfs.push(Etf {
                id: id.clone(),
                name: format!("{} {i}", cat.name),
                addv: Some(1e6 * (0.5 + rng.random::<f64>())),
                asset_class: Some(EtfAssetClass::Single(cat.asset_class)),
                thirdparty_category: Some(category.clone()),
                attributes: BTreeMap::new(),
            });
            let raw: Vec<f64> = (0..spec.securities_per_category)
                .map(|_| 0.5 + rng.random::<f64>())
                .collect();
            let total: f64 = raw.iter().sum();
            for (sec, w) in sec_ids.iter().zip(&raw) {
                holdings.push((id.clone(), sec.clone(), w / total));
            }
            level1.insert(id.clone(), category.clone());
            level2.insert(id, class.clone());
            etf_category.push(k);
        }
    }
    let n = etfs.len();

    // factor draws in a fixed order: classes (sorted), categories (spec
    // order), then per-ETF noise and the missing mask
    let classes: Vec<AssetClass> = {
        let mut seen: Vec<AssetClass> = Vec::new();
        for class in AssetClass::ALL {
            if spec.categories.iter().any(|c| c.asset_class == class) {
                seen.push(class);
            }
        }
        seen
    };
    let class_index: BTreeMap<&str, usize> =
        classes.iter().enumerate().map(|(i, c)| (c.name(), i)).collect();
    let mut class_factors = DMatrix::<f64>::zeros(classes.len(), t);
    for i in 0..classes.len() {
        for s in 0..t {
            class_factors[(i, s)] = rng.sample(StandardNormal);
        }
    }
    let mut category_factors = DMatrix::<f64>::zeros(spec.categories.len(), t);
    for k in 0..spec.categories.len() {
        for s in 0..t {
            category_factors[(k, s)] = rng.sample(StandardNormal);
        }
    }
    let mut values = DMatrix::<f64>::zeros(n, t);
    for i in 0..n {
        let k = etf_category[i];
        let cat = &spec.categories[k];
        let c = class_index[cat.asset_class.name()];
        for s in 0..t {
            let noise: f64 = rng.sample(StandardNormal);
            values[(i, s)] = spec.class_vol * class_factors[(c, s)]
                + cat.category_vol * category_factors[(k, s)]
                + spec.idio_vol * noise;
        }
    }
    let mut missing = DMatrix::from_element(n, t, false);
    if spec.missing_rate > 0.0 {
        for i in 0..n {
            for s in 0..t {
                missing[(i, s)] = rng.random::<f64>() < spec.missing_rate;
            }
        }
    }

    let etf_ids: Vec<EtfId> = etfs.iter().map(|e| e.id.clone()).collect();
    let panel = ReturnsPanel::new(etf_ids, business_dates(t), values, missing)?;
    let (holdings_table, _) = HoldingsTable::from_entries(holdings, 1e-9, false)?;

    let mut level1_categories: Vec<CategoryId> = parent_map.keys().cloned().collect();
    level1_categories.sort();
    let mut level2_categories: Vec<CategoryId> = parent_map
        .values()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    level2_categories.sort();
    let taxonomy = Taxonomy::new(vec![
        TaxonomyLevel {
            categories: level1_categories,
            assignment: LevelAssignment::Binary(level1),
            parent_map: Some(parent_map),
        },
        TaxonomyLevel {
            categories: level2_categories,
            assignment: LevelAssignment::Binary(level2),
            parent_map: None,
        },
    ])?;

    Ok(SynthData {
        universe: Universe {
            etfs,
            securities,
            holdings: holdings_table,
            returns: panel,
        },
        taxonomy,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, SynthError> {
    let file = fs::File::create(path).map_err(|source| SynthError::Io {
        file: path.display().to_string(),
        source,
    })?;
    Ok(std::io::BufWriter::new(file))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        file: path.display().to_string(),
        source,
    }
}

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(v) => v.to_string(),
        None => "NA".to_owned(),
    }
}

impl SynthData {
    /// Writes the four input CSVs plus the planted `taxonomy.txt` into
    /// `dir`. Output is byte-deterministic for a given spec.
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        let path = dir.join("etfs.csv");
        let mut out = create(&path)?;
        let err = io_err(&path);
        writeln!(
            out,
            "id,name,asset_class,addv,thirdparty_category,cap_tranche,style,region,duration_bucket"
        )
        .map_err(&err)?;
        for etf in &self.universe.etfs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                etf.id,
                etf.name,
                opt_str(&etf.asset_class),
                opt_str(&etf.addv),
                opt_str(&etf.thirdparty_category),
                etf.attribute("cap_tranche").unwrap_or("NA"),
                etf.attribute("style").unwrap_or("NA"),
                etf.attribute("region").unwrap_or("NA"),
                etf.attribute("duration_bucket").unwrap_or("NA"),
            )
            .map_err(&err)?;
        }
        out.flush().map_err(&err)?;

        let path = dir.join("securities.csv");
        let mut out = create(&path)?;
        let err = io_err(&path);
        writeln!(
            out,
            "id,asset_class,sector,market_cap,credit_rating,duration_years,style,region"
        )
        .map_err(&err)?;
        for sec in &self.universe.securities {
            // synthetic securities carry exactly one sector
            let sector = sec
                .sector_weights
                .keys()
                .next()
                .map(|c| c.to_string())
                .unwrap_or_else(|| "NA".to_owned());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                sec.id,
                sec.asset_class,
                sector,
                opt_str(&sec.market_cap),
                sec.credit_rating.as_deref().unwrap_or("NA"),
                opt_str(&sec.duration_years),
                sec.style.map(|s| s.name()).unwrap_or("NA"),
                sec.region.as_deref().unwrap_or("NA"),
            )
            .map_err(&err)?;
        }
        out.flush().map_err(&err)?;

        let path = dir.join("holdings.csv");
        let mut out = create(&path)?;
        let err = io_err(&path);
        writeln!(out, "etf_id,security_id,weight").map_err(&err)?;
        for (etf, row) in self.universe.holdings.iter() {
            for (sec, w) in row {
                writeln!(out, "{etf},{sec},{w}").map_err(&err)?;
            }
        }
        out.flush().map_err(&err)?;

        let path = dir.join("returns.csv");
        let mut out = create(&path)?;
        let err = io_err(&path);
        writeln!(out, "etf_id,date,return").map_err(&err)?;
        let panel = &self.universe.returns;
        for (i, etf) in panel.etf_ids.iter().enumerate() {
            for (s, date) in panel.dates.iter().enumerate() {
                if panel.missing[(i, s)] {
                    writeln!(out, "{etf},{date},NA").map_err(&err)?;
                } else {
                    writeln!(out, "{etf},{date},{}", panel.values[(i, s)]).map_err(&err)?;
                }
            }
        }
        out.flush().map_err(&err)?;

        save_taxonomy(&self.taxonomy, &dir.join("taxonomy.txt"))?;
        Ok(())
    }
}

/// Generates and writes a synthetic universe in one step.
pub fn write_synthetic_universe(spec: &SynthSpec, dir: &Path) -> Result<SynthData, SynthError> {
    let data = generate_synthetic_universe(spec)?;
    data.write_to(dir)?;
    Ok(data)
}
