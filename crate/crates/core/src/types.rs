//! Master records for constituent securities and ETFs.
//!
//! A [`Security`] carries the per-constituent attributes that exposures are
//! aggregated from (sector membership, market cap, credit rating, duration,
//! style, region). An [`Etf`] carries the fund-level fields used when
//! augmenting a third-party classification (ADDV, the third-party category,
//! and free-form attributes such as cap tranche or duration bucket).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::ids::{CategoryId, EtfId, SecurityId};

/// Sum of a weighted classification must be 1 within this tolerance.
pub const SECTOR_WEIGHT_TOL: f64 = 1e-9;

/// Asset class of a constituent security.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AssetClass {
    Equity,
    Bond,
    Commodity,
    Currency,
    RealEstate,
    Volatility,
    Other,
}

impl AssetClass {
    pub const ALL: [AssetClass; 7] = [
        AssetClass::Equity,
        AssetClass::Bond,
        AssetClass::Commodity,
        AssetClass::Currency,
        AssetClass::RealEstate,
        AssetClass::Volatility,
        AssetClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AssetClass::Equity => "Equity",
            AssetClass::Bond => "Bond",
            AssetClass::Commodity => "Commodity",
            AssetClass::Currency => "Currency",
            AssetClass::RealEstate => "RealEstate",
            AssetClass::Volatility => "Volatility",
            AssetClass::Other => "Other",
        }
    }
}

impl fmt::Display for AssetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AssetClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Equity" => Ok(AssetClass::Equity),
            "Bond" => Ok(AssetClass::Bond),
            "Commodity" => Ok(AssetClass::Commodity),
            "Currency" => Ok(AssetClass::Currency),
            "RealEstate" => Ok(AssetClass::RealEstate),
            "Volatility" => Ok(AssetClass::Volatility),
            "Other" => Ok(AssetClass::Other),
            other => Err(format!("unknown asset class `{other}`")),
        }
    }
}

/// Asset class of an ETF. Unlike a single security, a fund can be
/// genuinely multi-asset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EtfAssetClass {
    Single(AssetClass),
    MultiAsset,
}

impl EtfAssetClass {
    pub fn name(self) -> &'static str {
        match self {
            EtfAssetClass::Single(c) => c.name(),
            EtfAssetClass::MultiAsset => "MultiAsset",
        }
    }

    /// Level-2 category id used for this asset class.
    pub fn category_id(self) -> CategoryId {
        CategoryId::new(self.name())
    }
}

impl fmt::Display for EtfAssetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EtfAssetClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "MultiAsset" {
            Ok(EtfAssetClass::MultiAsset)
        } else {
            AssetClass::from_str(s).map(EtfAssetClass::Single)
        }
    }
}

/// Value/growth style flag of a constituent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Style {
    Value,
    Growth,
    Blend,
}

impl Style {
    pub fn name(self) -> &'static str {
        match self {
            Style::Value => "Value",
            Style::Growth => "Growth",
            Style::Blend => "Blend",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Value" => Ok(Style::Value),
            "Growth" => Ok(Style::Growth),
            "Blend" => Ok(Style::Blend),
            other => Err(format!("unknown style `{other}`")),
        }
    }
}

/// A constituent security with the attributes exposures are built from.
///
/// `sector_weights` holds the security's classification memberships. A
/// binary classification is stored as a single entry with weight 1; a
/// fractional classification has several entries summing to 1. Category ids
/// may be hierarchical paths (`Energy/Drilling`), in which case the segments
/// give increasingly granular levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Security {
    pub id: SecurityId,
    pub asset_class: AssetClass,
    pub sector_weights: BTreeMap<CategoryId, f64>,
    pub market_cap: Option<f64>,
    pub credit_rating: Option<String>,
    pub duration_years: Option<f64>,
    pub style: Option<Style>,
    pub region: Option<String>,
}

impl Security {
    /// Checks the per-record invariants: sector weights sum to 1 when
    /// present, market cap strictly positive, duration non-negative.
    pub fn validate(&self) -> Result<(), String> {
        if !self.sector_weights.is_empty() {
            let sum: f64 = self.sector_weights.values().sum();
            if (sum - 1.0).abs() > SECTOR_WEIGHT_TOL {
                return Err(format!("sector weights sum to {sum}, expected 1"));
            }
            if self.sector_weights.values().any(|&w| w < 0.0) {
                return Err("negative sector weight".to_owned());
            }
        }
        if let Some(cap) = self.market_cap {
            if cap.is_nan() || cap <= 0.0 {
                return Err(format!("market cap {cap} is not strictly positive"));
            }
        }
        if let Some(d) = self.duration_years {
            if d.is_nan() || d < 0.0 {
                return Err(format!("duration {d} is negative"));
            }
        }
        Ok(())
    }

    /// Sector at the given hierarchy depth (0 = coarsest), together with the
    /// membership weight. Securities whose sector path is shallower than
    /// `depth` contribute nothing at that depth.
    pub fn sector_at_depth(&self, depth: usize) -> Vec<(CategoryId, f64)> {
        let mut out: BTreeMap<CategoryId, f64> = BTreeMap::new();
        for (cat, w) in &self.sector_weights {
            let segments: Vec<&str> = cat.as_str().split('/').collect();
            if segments.len() > depth {
                let prefix = segments[..=depth].join("/");
                *out.entry(CategoryId::new(prefix)).or_insert(0.0) += *w;
            }
        }
        out.into_iter().collect()
    }
}

/// Fund-level attribute keys recognized in the ETF master.
pub const ETF_ATTRIBUTE_KEYS: [&str; 4] = ["cap_tranche", "style", "region", "duration_bucket"];

/// An ETF with its fund-level metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Etf {
    pub id: EtfId,
    pub name: String,
    /// Average daily dollar volume; `None` when unavailable.
    pub addv: Option<f64>,
    /// Declared asset class, when the provider supplies one.
    pub asset_class: Option<EtfAssetClass>,
    /// Single-level category from a third-party classification.
    pub thirdparty_category: Option<CategoryId>,
    /// Free-form attributes (cap tranche, style, region, duration bucket).
    pub attributes: BTreeMap<String, String>,
}

impl Etf {
    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }
}
