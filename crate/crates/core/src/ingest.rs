//! CSV ingestion for the four input files (ETF master, security master,
//! holdings, returns) with cross-file validation.
//!
//! Every malformed row is reported with file, line, and field. Missing
//! values use the single sentinel `NA` (an empty field is also accepted).
//! Ingestion is deterministic: identical inputs produce identical in-memory
//! structures and an identical validation report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::holdings::{HoldingsError, HoldingsTable};
use crate::ids::{CategoryId, EtfId, SecurityId};
use crate::panel::{PanelError, ReturnsPanel};
use crate::types::{Etf, EtfAssetClass, Security, Style, ETF_ATTRIBUTE_KEYS};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}: unexpected column `{column}`")]
    ExtraColumn { file: String, column: String },
    #[error("{file}:{line}: field `{field}`: {message}")]
    Field {
        file: String,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{file}:{line}: duplicate key `{key}`")]
    DuplicateKey {
        file: String,
        line: usize,
        key: String,
    },
    #[error("{file}:{line}: unknown {what} id `{id}`")]
    UnknownId {
        file: String,
        line: usize,
        what: &'static str,
        id: String,
    },
    #[error("{file}: {source}")]
    Holdings {
        file: String,
        #[source]
        source: HoldingsError,
    },
    #[error("{file}: {source}")]
    Panel {
        file: String,
        #[source]
        source: PanelError,
    },
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// Per-ETF holdings weight sums must match 1 within this tolerance.
    pub holdings_tol: f64,
    /// Rescale out-of-tolerance holdings rows instead of rejecting them.
    pub renormalize_holdings: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            holdings_tol: 1e-6,
            renormalize_holdings: false,
        }
    }
}

/// Input file locations for [`load_universe`].
#[derive(Debug, Clone)]
pub struct UniversePaths {
    pub etfs: PathBuf,
    pub securities: PathBuf,
    pub holdings: PathBuf,
    pub returns: PathBuf,
}

impl UniversePaths {
    /// Conventional file names under one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            etfs: dir.join("etfs.csv"),
            securities: dir.join("securities.csv"),
            holdings: dir.join("holdings.csv"),
            returns: dir.join("returns.csv"),
        }
    }
}

/// The four ingested collections, cross-validated.
#[derive(Debug, Clone)]
pub struct Universe {
    pub etfs: Vec<Etf>,
    pub securities: Vec<Security>,
    pub holdings: HoldingsTable,
    pub returns: ReturnsPanel,
}

impl Universe {
    pub fn etf(&self, id: &EtfId) -> Option<&Etf> {
        self.etfs.iter().find(|e| &e.id == id)
    }

    pub fn security(&self, id: &SecurityId) -> Option<&Security> {
        self.securities.iter().find(|s| &s.id == id)
    }
}

/// Deterministic coverage statistics produced by [`load_universe`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub n_etfs: usize,
    pub n_securities: usize,
    pub n_holdings_entries: usize,
    pub n_return_dates: usize,
    pub returns_missing_fraction: f64,
    /// ETFs whose holdings row sum was rescaled to 1.
    pub renormalized_etfs: Vec<EtfId>,
    pub etfs_without_holdings: Vec<EtfId>,
    pub etfs_without_returns: Vec<EtfId>,
    pub unreferenced_securities: Vec<SecurityId>,
    /// Fraction of ETFs carrying each optional attribute, keyed by name.
    pub attribute_coverage: BTreeMap<String, f64>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "etfs: {}", self.n_etfs)?;
        writeln!(f, "securities: {}", self.n_securities)?;
        writeln!(f, "holdings entries: {}", self.n_holdings_entries)?;
        writeln!(f, "return dates: {}", self.n_return_dates)?;
        writeln!(
            f,
            "returns missing fraction: {:.6}",
            self.returns_missing_fraction
        )?;
        for (name, frac) in &self.attribute_coverage {
            writeln!(f, "coverage {name}: {frac:.6}")?;
        }
        for etf in &self.renormalized_etfs {
            writeln!(f, "renormalized holdings: {etf}")?;
        }
        for etf in &self.etfs_without_holdings {
            writeln!(f, "no holdings: {etf}")?;
        }
        for etf in &self.etfs_without_returns {
            writeln!(f, "no returns: {etf}")?;
        }
        for sec in &self.unreferenced_securities {
            writeln!(f, "unreferenced security: {sec}")?;
        }
        Ok(())
    }
}

const ETF_COLUMNS: &[&str] = &[
    "id",
    "name",
    "asset_class",
    "addv",
    "thirdparty_category",
    "cap_tranche",
    "style",
    "region",
    "duration_bucket",
];
const SECURITY_COLUMNS: &[&str] = &[
    "id",
    "asset_class",
    "sector",
    "market_cap",
    "credit_rating",
    "duration_years",
    "style",
    "region",
];
const HOLDINGS_COLUMNS: &[&str] = &["etf_id", "security_id", "weight"];
const RETURNS_COLUMNS: &[&str] = &["etf_id", "date", "return"];

/// Column-name -> index map; rejects missing and unexpected columns.
struct Header {
    file: String,
    index: BTreeMap<String, usize>,
}

impl Header {
    fn parse(
        file: &str,
        record: &csv::StringRecord,
        expected: &[&str],
    ) -> Result<Self, IngestError> {
        let mut index = BTreeMap::new();
        for (i, name) in record.iter().enumerate() {
            let name = name.trim();
            if !expected.contains(&name) {
                return Err(IngestError::ExtraColumn {
                    file: file.to_owned(),
                    column: name.to_owned(),
                });
            }
            index.insert(name.to_owned(), i);
        }
        for name in expected {
            if !index.contains_key(*name) {
                return Err(IngestError::MissingColumn {
                    file: file.to_owned(),
                    column: (*name).to_owned(),
                });
            }
        }
        Ok(Self {
            file: file.to_owned(),
            index,
        })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, column: &str) -> &'r str {
        record.get(self.index[column]).unwrap_or("").trim()
    }

    /// `NA` and empty fields are missing.
    fn opt<'r>(&self, record: &'r csv::StringRecord, column: &str) -> Option<&'r str> {
        let raw = self.get(record, column);
        if raw.is_empty() || raw == "NA" {
            None
        } else {
            Some(raw)
        }
    }

    fn required<'r>(
        &self,
        record: &'r csv::StringRecord,
        line: usize,
        column: &str,
    ) -> Result<&'r str, IngestError> {
        self.opt(record, column).ok_or_else(|| IngestError::Field {
            file: self.file.clone(),
            line,
            field: column.to_owned(),
            message: "value required".to_owned(),
        })
    }

    fn field_err(&self, line: usize, column: &str, message: impl Into<String>) -> IngestError {
        IngestError::Field {
            file: self.file.clone(),
            line,
            field: column.to_owned(),
            message: message.into(),
        }
    }

    fn parse_f64(
        &self,
        record: &csv::StringRecord,
        line: usize,
        column: &str,
    ) -> Result<Option<f64>, IngestError> {
        match self.opt(record, column) {
            None => Ok(None),
            Some(raw) => {
                let value: f64 = raw
                    .parse()
                    .map_err(|_| self.field_err(line, column, format!("invalid number `{raw}`")))?;
                if !value.is_finite() {
                    return Err(self.field_err(line, column, "non-finite number"));
                }
                Ok(Some(value))
            }
        }
    }
}

fn open_reader(path: &Path) -> Result<(String, csv::Reader<std::fs::File>), IngestError> {
    let file = path.display().to_string();
    let reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| match source.kind() {
            csv::ErrorKind::Io(_) => IngestError::Io {
                file: file.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, source.to_string()),
            },
            _ => IngestError::Csv {
                file: file.clone(),
                source,
            },
        })?;
    Ok((file, reader))
}

/// Iterates records with 1-based line numbers (header is line 1).
fn records(
    file: &str,
    reader: &mut csv::Reader<std::fs::File>,
) -> Result<Vec<(usize, csv::StringRecord)>, IngestError> {
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| IngestError::Csv {
            file: file.to_owned(),
            source,
        })?;
        rows.push((i + 2, record));
    }
    Ok(rows)
}

pub fn load_etfs(path: &Path) -> Result<Vec<Etf>, IngestError> {
    let (file, mut reader) = open_reader(path)?;
    let header = Header::parse(
        &file,
        reader
            .headers()
            .map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?,
        ETF_COLUMNS,
    )?;
    let mut etfs = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, record) in records(&file, &mut reader)? {
        let id = EtfId::new(header.required(&record, line, "id")?);
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateKey {
                file: file.clone(),
                line,
                key: id.to_string(),
            });
        }
        let asset_class = match header.opt(&record, "asset_class") {
            None => None,
            Some(raw) => Some(
                EtfAssetClass::from_str(raw)
                    .map_err(|e| header.field_err(line, "asset_class", e))?,
            ),
        };
        let addv = header.parse_f64(&record, line, "addv")?;
        if let Some(v) = addv {
            if v < 0.0 {
                return Err(header.field_err(line, "addv", "must be non-negative"));
            }
        }
        let mut attributes = BTreeMap::new();
        for key in ETF_ATTRIBUTE_KEYS {
            if let Some(value) = header.opt(&record, key) {
                attributes.insert((*key).to_owned(), value.to_owned());
            }
        }
        etfs.push(Etf {
            id,
            name: header.get(&record, "name").to_owned(),
            asset_class,
            addv,
            thirdparty_category: header.opt(&record, "thirdparty_category").map(CategoryId::new),
            attributes,
        });
    }
    Ok(etfs)
}

/// Parses `sector` in binary form (`Tech`) or weighted form (`Tech:0.6;Energy:0.4`).
fn parse_sector_weights(
    header: &Header,
    line: usize,
    raw: &str,
) -> Result<BTreeMap<CategoryId, f64>, IngestError> {
    let mut weights = BTreeMap::new();
    if !raw.contains(':') {
        weights.insert(CategoryId::new(raw), 1.0);
        return Ok(weights);
    }
    for part in raw.split(';') {
        let (name, weight) = part
            .rsplit_once(':')
            .ok_or_else(|| header.field_err(line, "sector", format!("malformed entry `{part}`")))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(header.field_err(line, "sector", "empty sector name"));
        }
        let w: f64 = weight
            .trim()
            .parse()
            .map_err(|_| header.field_err(line, "sector", format!("invalid weight `{weight}`")))?;
        if weights.insert(CategoryId::new(name), w).is_some() {
            return Err(header.field_err(line, "sector", format!("duplicate sector `{name}`")));
        }
    }
    Ok(weights)
}

pub fn load_securities(path: &Path) -> Result<Vec<Security>, IngestError> {
    let (file, mut reader) = open_reader(path)?;
    let header = Header::parse(
        &file,
        reader
            .headers()
            .map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?,
        SECURITY_COLUMNS,
    )?;
    let mut securities = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, record) in records(&file, &mut reader)? {
        let id = SecurityId::new(header.required(&record, line, "id")?);
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateKey {
                file: file.clone(),
                line,
                key: id.to_string(),
            });
        }
        let asset_class = header
            .required(&record, line, "asset_class")?
            .parse()
            .map_err(|e: String| header.field_err(line, "asset_class", e))?;
        let sector_weights = match header.opt(&record, "sector") {
            None => BTreeMap::new(),
            Some(raw) => parse_sector_weights(&header, line, raw)?,
        };
        let style = match header.opt(&record, "style") {
            None => None,
            Some(raw) => {
                Some(Style::from_str(raw).map_err(|e| header.field_err(line, "style", e))?)
            }
        };
        let security = Security {
            id,
            asset_class,
            sector_weights,
            market_cap: header.parse_f64(&record, line, "market_cap")?,
            credit_rating: header.opt(&record, "credit_rating").map(str::to_owned),
            duration_years: header.parse_f64(&record, line, "duration_years")?,
            style,
            region: header.opt(&record, "region").map(str::to_owned),
        };
        security
            .validate()
            .map_err(|e| header.field_err(line, "sector", e))?;
        securities.push(security);
    }
    Ok(securities)
}

/// Raw holdings rows with their source line, before table construction.
pub fn load_holdings_rows(path: &Path) -> Result<Vec<(usize, EtfId, SecurityId, f64)>, IngestError> {
    let (file, mut reader) = open_reader(path)?;
    let header = Header::parse(
        &file,
        reader
            .headers()
            .map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?,
        HOLDINGS_COLUMNS,
    )?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, record) in records(&file, &mut reader)? {
        let etf = EtfId::new(header.required(&record, line, "etf_id")?);
        let security = SecurityId::new(header.required(&record, line, "security_id")?);
        if !seen.insert((etf.clone(), security.clone())) {
            return Err(IngestError::DuplicateKey {
                file: file.clone(),
                line,
                key: format!("{etf}/{security}"),
            });
        }
        let weight = header
            .parse_f64(&record, line, "weight")?
            .ok_or_else(|| header.field_err(line, "weight", "value required"))?;
        rows.push((line, etf, security, weight));
    }
    Ok(rows)
}

pub fn load_holdings(path: &Path, config: &IngestConfig) -> Result<HoldingsTable, IngestError> {
    let rows = load_holdings_rows(path)?;
    build_holdings(path, rows, config).map(|(table, _)| table)
}

fn build_holdings(
    path: &Path,
    rows: Vec<(usize, EtfId, SecurityId, f64)>,
    config: &IngestConfig,
) -> Result<(HoldingsTable, Vec<EtfId>), IngestError> {
    let entries: Vec<(EtfId, SecurityId, f64)> =
        rows.into_iter().map(|(_, e, s, w)| (e, s, w)).collect();
    HoldingsTable::from_entries(entries, config.holdings_tol, config.renormalize_holdings)
        .map_err(|source| IngestError::Holdings {
            file: path.display().to_string(),
            source,
        })
}

pub fn load_returns(path: &Path) -> Result<ReturnsPanel, IngestError> {
    let (file, mut reader) = open_reader(path)?;
    let header = Header::parse(
        &file,
        reader
            .headers()
            .map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?,
        RETURNS_COLUMNS,
    )?;
    // cell map keyed by (etf, date); None marks an explicit NA
    let mut cells: BTreeMap<(EtfId, NaiveDate), Option<f64>> = BTreeMap::new();
    let mut etf_ids = BTreeSet::new();
    let mut dates = BTreeSet::new();
    for (line, record) in records(&file, &mut reader)? {
        let etf = EtfId::new(header.required(&record, line, "etf_id")?);
        let raw_date = header.required(&record, line, "date")?;
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d")
            .map_err(|_| header.field_err(line, "date", format!("invalid date `{raw_date}`")))?;
        let value = header.parse_f64(&record, line, "return")?;
        if cells.insert((etf.clone(), date), value).is_some() {
            return Err(IngestError::DuplicateKey {
                file: file.clone(),
                line,
                key: format!("{etf}/{date}"),
            });
        }
        etf_ids.insert(etf);
        dates.insert(date);
    }
    let etf_ids: Vec<EtfId> = etf_ids.into_iter().collect();
    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let n = etf_ids.len();
    let t = dates.len();
    let mut values = DMatrix::zeros(n, t);
    let mut missing = DMatrix::from_element(n, t, true);
    for (i, etf) in etf_ids.iter().enumerate() {
        for (s, date) in dates.iter().enumerate() {
            if let Some(Some(v)) = cells.get(&(etf.clone(), *date)) {
                values[(i, s)] = *v;
                missing[(i, s)] = false;
            }
        }
    }
    ReturnsPanel::new(etf_ids, dates, values, missing).map_err(|source| IngestError::Panel {
        file,
        source,
    })
}

/// Loads all four files and cross-validates references between them.
///
/// Holdings and returns rows that name an ETF or security absent from the
/// masters are hard errors. Coverage gaps (an ETF without holdings or
/// returns, an unreferenced security) are recorded in the report.
pub fn load_universe(
    paths: &UniversePaths,
    config: &IngestConfig,
) -> Result<(Universe, ValidationReport), IngestError> {
    let etfs = load_etfs(&paths.etfs)?;
    let securities = load_securities(&paths.securities)?;
    let holdings_rows = load_holdings_rows(&paths.holdings)?;
    let returns = load_returns(&paths.returns)?;

    let etf_ids: BTreeSet<&EtfId> = etfs.iter().map(|e| &e.id).collect();
    let security_ids: BTreeSet<&SecurityId> = securities.iter().map(|s| &s.id).collect();
    let holdings_file = paths.holdings.display().to_string();
    for (line, etf, security, _) in &holdings_rows {
        if !etf_ids.contains(etf) {
            return Err(IngestError::UnknownId {
                file: holdings_file.clone(),
                line: *line,
                what: "etf",
                id: etf.to_string(),
            });
        }
        if !security_ids.contains(security) {
            return Err(IngestError::UnknownId {
                file: holdings_file.clone(),
                line: *line,
                what: "security",
                id: security.to_string(),
            });
        }
    }
    for etf in &returns.etf_ids {
        if !etf_ids.contains(etf) {
            return Err(IngestError::UnknownId {
                file: paths.returns.display().to_string(),
                line: 0,
                what: "etf",
                id: etf.to_string(),
            });
        }
    }

    let (holdings, renormalized_etfs) = build_holdings(&paths.holdings, holdings_rows, config)?;

    let referenced: BTreeSet<&SecurityId> = holdings
        .iter()
        .flat_map(|(_, row)| row.iter().map(|(s, _)| s))
        .collect();
    let with_returns: BTreeSet<&EtfId> = returns.etf_ids.iter().collect();
    let mut attribute_coverage = BTreeMap::new();
    if !etfs.is_empty() {
        let n = etfs.len() as f64;
        for key in ETF_ATTRIBUTE_KEYS {
            let covered = etfs.iter().filter(|e| e.attribute(key).is_some()).count();
            attribute_coverage.insert((*key).to_owned(), covered as f64 / n);
        }
        let with_class = etfs.iter().filter(|e| e.asset_class.is_some()).count();
        attribute_coverage.insert("asset_class".to_owned(), with_class as f64 / etfs.len() as f64);
        let with_addv = etfs.iter().filter(|e| e.addv.is_some()).count();
        attribute_coverage.insert("addv".to_owned(), with_addv as f64 / n);
        let with_cat = etfs
            .iter()
            .filter(|e| e.thirdparty_category.is_some())
            .count();
        attribute_coverage.insert("thirdparty_category".to_owned(), with_cat as f64 / n);
    }

    let report = ValidationReport {
        n_etfs: etfs.len(),
        n_securities: securities.len(),
        n_holdings_entries: holdings.entry_count(),
        n_return_dates: returns.n_dates(),
        returns_missing_fraction: returns.missing_fraction(),
        renormalized_etfs,
        etfs_without_holdings: etfs
            .iter()
            .filter(|e| holdings.row(&e.id).is_none())
            .map(|e| e.id.clone())
            .collect(),
        etfs_without_returns: etfs
            .iter()
            .filter(|e| !with_returns.contains(&e.id))
            .map(|e| e.id.clone())
            .collect(),
        unreferenced_securities: securities
            .iter()
            .filter(|s| !referenced.contains(&s.id))
            .map(|s| s.id.clone())
            .collect(),
        attribute_coverage,
    };

    Ok((
        Universe {
            etfs,
            securities,
            holdings,
            returns,
        },
        report,
    ))
}
