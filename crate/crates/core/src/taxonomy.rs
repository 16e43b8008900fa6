//! Multilevel ETF taxonomy: per-level category assignments plus the
//! parent map linking consecutive levels, with a line-oriented file format.
//!
//! Level 1 (`levels[0]`) is the most granular level. Each level other than
//! the top carries a `parent_map` sending every category to exactly one
//! category of the next level, so a 2-level taxonomy is the pair of maps
//! ETF -> category -> asset class.
//!
//! # File format
//!
//! Tab-separated records, one per line; `#` starts a comment. The header
//! line is `etf-taxonomy<TAB>1`. Each level section is:
//!
//! ```text
//! level<TAB><k>
//! kind<TAB>binary|weighted
//! category<TAB><id>[<TAB><parent id>]     # parent absent on the top level
//! assign<TAB><etf><TAB><category>         # binary levels
//! weight<TAB><etf><TAB><category><TAB><w> # weighted levels
//! ```
//!
//! Save order is deterministic (categories and ETFs sorted by id), so equal
//! taxonomies serialize to identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::ids::{CategoryId, EtfId};

/// Weighted assignments must sum to 1 within this tolerance.
pub const ASSIGNMENT_WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy has no levels")]
    Empty,
    #[error("level {level}: ETF {etf} assigned to undeclared category {category}")]
    UndeclaredCategory {
        level: usize,
        etf: EtfId,
        category: CategoryId,
    },
    #[error("level {level}: ETF {etf} weights sum to {sum}, expected 1")]
    WeightSum { level: usize, etf: EtfId, sum: f64 },
    #[error("level {level}: ETF {etf} has a negative weight on {category}")]
    NegativeWeight {
        level: usize,
        etf: EtfId,
        category: CategoryId,
    },
    #[error("level {level}: category {category} maps to more than one parent")]
    MultipleParents { level: usize, category: CategoryId },
    #[error("level {level}: category {category} has no parent")]
    MissingParent { level: usize, category: CategoryId },
    #[error("level {level}: parent {parent} of {category} is not a category of level {next}")]
    UnknownParent {
        level: usize,
        category: CategoryId,
        parent: CategoryId,
        next: usize,
    },
    #[error("top level must not carry a parent map")]
    ParentOnTop,
    #[error("level {level}: ETF set differs from level 1 (e.g. {etf})")]
    EtfSetMismatch { level: usize, etf: EtfId },
    #[error(
        "level {level}: ETF {etf} assigned to {category} whose parent is {parent}, \
         but level {next} assigns {actual}"
    )]
    ParentInconsistent {
        level: usize,
        etf: EtfId,
        category: CategoryId,
        parent: CategoryId,
        next: usize,
        actual: CategoryId,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelKind {
    Binary,
    Weighted,
}

/// Category assignment of every ETF at one taxonomy level.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelAssignment {
    /// One category per ETF.
    Binary(BTreeMap<EtfId, CategoryId>),
    /// Non-negative weights per ETF, summing to 1.
    Weighted(BTreeMap<EtfId, Vec<(CategoryId, f64)>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyLevel {
    pub categories: Vec<CategoryId>,
    pub assignment: LevelAssignment,
    /// Category of this level -> category of the next level. `None` on the
    /// top level only.
    pub parent_map: Option<BTreeMap<CategoryId, CategoryId>>,
}

impl TaxonomyLevel {
    pub fn kind(&self) -> LevelKind {
        match self.assignment {
            LevelAssignment::Binary(_) => LevelKind::Binary,
            LevelAssignment::Weighted(_) => LevelKind::Weighted,
        }
    }

    pub fn etf_ids(&self) -> BTreeSet<EtfId> {
        match &self.assignment {
            LevelAssignment::Binary(map) => map.keys().cloned().collect(),
            LevelAssignment::Weighted(map) => map.keys().cloned().collect(),
        }
    }

    /// Binary assignment of one ETF; `None` for weighted levels or unknown ids.
    pub fn category_of(&self, etf: &EtfId) -> Option<&CategoryId> {
        match &self.assignment {
            LevelAssignment::Binary(map) => map.get(etf),
            LevelAssignment::Weighted(_) => None,
        }
    }

    /// Members of a category on a binary level, sorted by id.
    pub fn members_of(&self, category: &CategoryId) -> Vec<EtfId> {
        match &self.assignment {
            LevelAssignment::Binary(map) => map
                .iter()
                .filter(|(_, c)| *c == category)
                .map(|(e, _)| e.clone())
                .collect(),
            LevelAssignment::Weighted(map) => map
                .iter()
                .filter(|(_, ws)| ws.iter().any(|(c, w)| c == category && *w > 0.0))
                .map(|(e, _)| e.clone())
                .collect(),
        }
    }

    /// Per-category member counts on a binary level.
    pub fn category_sizes(&self) -> BTreeMap<CategoryId, usize> {
        let mut sizes: BTreeMap<CategoryId, usize> =
            self.categories.iter().map(|c| (c.clone(), 0)).collect();
        match &self.assignment {
            LevelAssignment::Binary(map) => {
                for cat in map.values() {
                    *sizes.entry(cat.clone()).or_insert(0) += 1;
                }
            }
            LevelAssignment::Weighted(map) => {
                for ws in map.values() {
                    for (cat, w) in ws {
                        if *w > 0.0 {
                            *sizes.entry(cat.clone()).or_insert(0) += 1;
                        }
                    }
                }
            }
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    pub levels: Vec<TaxonomyLevel>,
}

impl Taxonomy {
    pub fn new(levels: Vec<TaxonomyLevel>) -> Result<Self, TaxonomyError> {
        let taxonomy = Self { levels };
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &TaxonomyLevel {
        &self.levels[k]
    }

    /// ETF universe covered by the taxonomy, sorted.
    pub fn etf_ids(&self) -> Vec<EtfId> {
        self.levels
            .first()
            .map(|l| l.etf_ids().into_iter().collect())
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if self.levels.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let universe = self.levels[0].etf_ids();
        for (k, level) in self.levels.iter().enumerate() {
            let declared: BTreeSet<&CategoryId> = level.categories.iter().collect();
            let etfs = level.etf_ids();
            if let Some(odd) = etfs.symmetric_difference(&universe).next() {
                if k > 0 {
                    return Err(TaxonomyError::EtfSetMismatch {
                        level: k + 1,
                        etf: odd.clone(),
                    });
                }
            }
            match &level.assignment {
                LevelAssignment::Binary(map) => {
                    for (etf, cat) in map {
                        if !declared.contains(cat) {
                            return Err(TaxonomyError::UndeclaredCategory {
                                level: k + 1,
                                etf: etf.clone(),
                                category: cat.clone(),
                            });
                        }
                    }
                }
                LevelAssignment::Weighted(map) => {
                    for (etf, weights) in map {
                        let mut sum = 0.0;
                        for (cat, w) in weights {
                            if !declared.contains(cat) {
                                return Err(TaxonomyError::UndeclaredCategory {
                                    level: k + 1,
                                    etf: etf.clone(),
                                    category: cat.clone(),
                                });
                            }
                            if *w < 0.0 {
                                return Err(TaxonomyError::NegativeWeight {
                                    level: k + 1,
                                    etf: etf.clone(),
                                    category: cat.clone(),
                                });
                            }
                            sum += w;
                        }
                        if (sum - 1.0).abs() > ASSIGNMENT_WEIGHT_TOL {
                            return Err(TaxonomyError::WeightSum {
                                level: k + 1,
                                etf: etf.clone(),
                                sum,
                            });
                        }
                    }
                }
            }
            let is_top = k + 1 == self.levels.len();
            match (&level.parent_map, is_top) {
                (Some(_), true) => return Err(TaxonomyError::ParentOnTop),
                (None, false) => {
                    // every non-top category needs a parent
                    if let Some(cat) = level.categories.first() {
                        return Err(TaxonomyError::MissingParent {
                            level: k + 1,
                            category: cat.clone(),
                        });
                    }
                }
                (Some(parents), false) => {
                    let next: BTreeSet<&CategoryId> =
                        self.levels[k + 1].categories.iter().collect();
                    for cat in &level.categories {
                        match parents.get(cat) {
                            None => {
                                return Err(TaxonomyError::MissingParent {
                                    level: k + 1,
                                    category: cat.clone(),
                                })
                            }
                            Some(parent) if !next.contains(parent) => {
                                return Err(TaxonomyError::UnknownParent {
                                    level: k + 1,
                                    category: cat.clone(),
                                    parent: parent.clone(),
                                    next: k + 2,
                                });
                            }
                            Some(_) => {}
                        }
                    }
                    // binary-to-binary levels must agree with the parent map
                    if let (LevelAssignment::Binary(map), LevelAssignment::Binary(next_map)) =
                        (&level.assignment, &self.levels[k + 1].assignment)
                    {
                        for (etf, cat) in map {
                            let parent = &parents[cat];
                            if let Some(actual) = next_map.get(etf) {
                                if actual != parent {
                                    return Err(TaxonomyError::ParentInconsistent {
                                        level: k + 1,
                                        etf: etf.clone(),
                                        category: cat.clone(),
                                        parent: parent.clone(),
                                        next: k + 2,
                                        actual: actual.clone(),
                                    });
                                }
                            }
                        }
                    }
                }
                (None, true) => {}
            }
        }
        Ok(())
    }
}

fn check_token(token: &str, what: &str) -> Result<(), TaxonomyError> {
    if token.contains('\t') || token.contains('\n') || token.is_empty() {
        return Err(TaxonomyError::Parse {
            file: "<save>".to_owned(),
            line: 0,
            message: format!("{what} `{token}` is empty or contains a tab/newline"),
        });
    }
    Ok(())
}

/// Writes a taxonomy in the line-oriented format with deterministic ordering.
pub fn write_taxonomy<W: Write>(taxonomy: &Taxonomy, mut out: W) -> Result<(), TaxonomyError> {
    taxonomy.validate()?;
    writeln!(out, "etf-taxonomy\t1")?;
    writeln!(out, "levels\t{}", taxonomy.n_levels())?;
    for (k, level) in taxonomy.levels.iter().enumerate() {
        writeln!(out)?;
        writeln!(out, "level\t{}", k + 1)?;
        let kind = match level.kind() {
            LevelKind::Binary => "binary",
            LevelKind::Weighted => "weighted",
        };
        writeln!(out, "kind\t{kind}")?;
        let mut categories = level.categories.clone();
        categories.sort();
        for cat in &categories {
            check_token(cat.as_str(), "category id")?;
            match &level.parent_map {
                Some(parents) => writeln!(out, "category\t{}\t{}", cat, parents[cat])?,
                None => writeln!(out, "category\t{cat}")?,
            }
        }
        match &level.assignment {
            LevelAssignment::Binary(map) => {
                for (etf, cat) in map {
                    check_token(etf.as_str(), "etf id")?;
                    writeln!(out, "assign\t{etf}\t{cat}")?;
                }
            }
            LevelAssignment::Weighted(map) => {
                for (etf, weights) in map {
                    check_token(etf.as_str(), "etf id")?;
                    let mut sorted = weights.clone();
                    sorted.sort_by(|a, b| a.0.cmp(&b.0));
                    for (cat, w) in sorted {
                        writeln!(out, "weight\t{etf}\t{cat}\t{w}")?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn save_taxonomy(taxonomy: &Taxonomy, path: &Path) -> Result<(), TaxonomyError> {
    let mut buffer = Vec::new();
    write_taxonomy(taxonomy, &mut buffer)?;
    fs::write(path, buffer)?;
    Ok(())
}

struct LevelDraft {
    kind: Option<LevelKind>,
    categories: Vec<CategoryId>,
    parents: BTreeMap<CategoryId, CategoryId>,
    binary: BTreeMap<EtfId, CategoryId>,
    weighted: BTreeMap<EtfId, Vec<(CategoryId, f64)>>,
}

impl LevelDraft {
    fn new() -> Self {
        Self {
            kind: None,
            categories: Vec::new(),
            parents: BTreeMap::new(),
            binary: BTreeMap::new(),
            weighted: BTreeMap::new(),
        }
    }

    fn finish(self, is_top: bool, file: &str, line: usize) -> Result<TaxonomyLevel, TaxonomyError> {
        let kind = self.kind.ok_or_else(|| TaxonomyError::Parse {
            file: file.to_owned(),
            line,
            message: "level without a kind record".to_owned(),
        })?;
        let assignment = match kind {
            LevelKind::Binary => LevelAssignment::Binary(self.binary),
            LevelKind::Weighted => LevelAssignment::Weighted(self.weighted),
        };
        Ok(TaxonomyLevel {
            categories: self.categories,
            assignment,
            parent_map: if is_top { None } else { Some(self.parents) },
        })
    }
}

/// Parses the taxonomy format and re-validates all invariants.
pub fn read_taxonomy(content: &str, file: &str) -> Result<Taxonomy, TaxonomyError> {
    let parse_err = |line: usize, message: String| TaxonomyError::Parse {
        file: file.to_owned(),
        line,
        message,
    };
    let mut lines = content
        .lines()
        .enumerate()
        .map(|(no, l)| (no + 1, l.trim_end()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (no, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty taxonomy file".to_owned()))?;
    if header != "etf-taxonomy\t1" {
        return Err(parse_err(no, format!("unexpected header `{header}`")));
    }

    let mut declared_levels = None;
    let mut drafts: Vec<(usize, LevelDraft)> = Vec::new();
    let mut last_line = no;

    for (no, line) in lines {
        last_line = no;
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "levels" if fields.len() == 2 => {
                declared_levels = Some(fields[1].parse::<usize>().map_err(|_| {
                    parse_err(no, format!("invalid level count `{}`", fields[1]))
                })?);
            }
            "level" if fields.len() == 2 => {
                let k: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(no, format!("invalid level number `{}`", fields[1])))?;
                if k != drafts.len() + 1 {
                    return Err(parse_err(no, format!("levels out of order at level {k}")));
                }
                drafts.push((no, LevelDraft::new()));
            }
            "kind" if fields.len() == 2 => {
                let draft = current(&mut drafts, no, file)?;
                draft.kind = Some(match fields[1] {
                    "binary" => LevelKind::Binary,
                    "weighted" => LevelKind::Weighted,
                    other => return Err(parse_err(no, format!("unknown kind `{other}`"))),
                });
            }
            "category" if fields.len() == 2 || fields.len() == 3 => {
                let draft = current(&mut drafts, no, file)?;
                let cat = CategoryId::new(fields[1]);
                if fields.len() == 3 {
                    let parent = CategoryId::new(fields[2]);
                    if let Some(existing) = draft.parents.get(&cat) {
                        if *existing != parent {
                            return Err(parse_err(
                                no,
                                format!(
                                    "category {cat} maps to both {existing} and {parent}"
                                ),
                            ));
                        }
                    }
                    draft.parents.insert(cat.clone(), parent);
                }
                if !draft.categories.contains(&cat) {
                    draft.categories.push(cat);
                }
            }
            "assign" if fields.len() == 3 => {
                let draft = current(&mut drafts, no, file)?;
                let etf = EtfId::new(fields[1]);
                if draft.binary.contains_key(&etf) {
                    return Err(parse_err(no, format!("duplicate assignment for {etf}")));
                }
                draft.binary.insert(etf, CategoryId::new(fields[2]));
            }
            "weight" if fields.len() == 4 => {
                let draft = current(&mut drafts, no, file)?;
                let w: f64 = fields[3]
                    .parse()
                    .map_err(|_| parse_err(no, format!("invalid weight `{}`", fields[3])))?;
                draft
                    .weighted
                    .entry(EtfId::new(fields[1]))
                    .or_default()
                    .push((CategoryId::new(fields[2]), w));
            }
            _ => return Err(parse_err(no, format!("unrecognized record `{line}`"))),
        }
    }

    let n = drafts.len();
    if let Some(declared) = declared_levels {
        if declared != n {
            return Err(parse_err(
                last_line,
                format!("file declares {declared} levels but contains {n}"),
            ));
        }
    }
    let mut levels = Vec::with_capacity(n);
    for (idx, (line, draft)) in drafts.into_iter().enumerate() {
        levels.push(draft.finish(idx + 1 == n, file, line)?);
    }
    Taxonomy::new(levels)
}

fn current<'a>(
    drafts: &'a mut [(usize, LevelDraft)],
    no: usize,
    file: &str,
) -> Result<&'a mut LevelDraft, TaxonomyError> {
    drafts
        .last_mut()
        .map(|(_, d)| d)
        .ok_or_else(|| TaxonomyError::Parse {
            file: file.to_owned(),
            line: no,
            message: "record before the first level header".to_owned(),
        })
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, TaxonomyError> {
    let content = fs::read_to_string(path)?;
    read_taxonomy(&content, &path.display().to_string())
}
