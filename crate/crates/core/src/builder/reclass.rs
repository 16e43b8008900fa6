//! Reclassification of undersized categories by return correlation.

use std::collections::BTreeMap;

use crate::builder::{category_average_returns, other_category, BuilderError};
use crate::ids::{CategoryId, EtfId};
use crate::panel::ReturnsPanel;
use crate::taxonomy::{LevelAssignment, TaxonomyLevel};

/// Correlations are only trusted on at least this many overlapping
/// observations; below it the ETF moves to the largest candidate instead.
pub const MIN_CORRELATION_OVERLAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReclassRule {
    /// Moved to the candidate with the highest correlation.
    MaxCorrelation,
    /// No usable correlation; moved to the largest candidate.
    LargestCandidate,
    /// No candidate of admissible size in the asset class; merged into the
    /// class's catch-all category.
    MergedOther,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReclassMove {
    pub etf: EtfId,
    pub from: CategoryId,
    /// Candidate categories with their correlations, sorted by id. `None`
    /// marks an uncomputable correlation (insufficient overlap or constant
    /// series).
    pub candidates: Vec<(CategoryId, Option<f64>)>,
    pub to: CategoryId,
    pub rule: ReclassRule,
}

impl std::fmt::Display for ReclassMove {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} -> {}", self.etf, self.from, self.to)?;
        match self.rule {
            ReclassRule::MaxCorrelation => {
                write!(f, " (max correlation;")?;
                for (cat, rho) in &self.candidates {
                    match rho {
                        Some(r) => write!(f, " {cat}={r:.4}")?,
                        None => write!(f, " {cat}=n/a")?,
                    }
                }
                write!(f, ")")
            }
            ReclassRule::LargestCandidate => write!(f, " (no usable correlation; largest candidate)"),
            ReclassRule::MergedOther => write!(f, " (no candidates in class; merged)"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReclassReport {
    /// One entry per moved ETF, in (source category, ETF) order.
    pub moves: Vec<ReclassMove>,
}

impl ReclassReport {
    pub fn lines(&self) -> Vec<String> {
        self.moves.iter().map(|m| m.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reclassified {
    pub assignment: BTreeMap<EtfId, CategoryId>,
    /// Category -> asset class after the moves; emptied categories are
    /// dropped, merged catch-alls added.
    pub class_of: BTreeMap<CategoryId, CategoryId>,
    pub report: ReclassReport,
}

/// Empties every category smaller than `n_star` by moving each member to
/// the same-class candidate category (size >= `n_star`) whose average
/// return series correlates best with the member's series over the trailing
/// `window` dates (pairwise-complete observations). Ties take the first
/// candidate in id order. When the asset class has no admissible candidate,
/// all its undersized categories merge into one `{Class} - Other` category.
///
/// Sizes, candidate sets, and category averages are all taken from the
/// input assignment, so moves do not influence one another.
pub fn reclassify_small_categories(
    assignment: &BTreeMap<EtfId, CategoryId>,
    class_of: &BTreeMap<CategoryId, CategoryId>,
    panel: &ReturnsPanel,
    n_star: usize,
    window: usize,
) -> Result<Reclassified, BuilderError> {
    if window == 0 {
        return Err(BuilderError::ZeroWindow);
    }
    if window > panel.n_dates() {
        return Err(BuilderError::WindowTooLong {
            window,
            available: panel.n_dates(),
        });
    }

    let mut sizes: BTreeMap<&CategoryId, usize> = BTreeMap::new();
    for category in assignment.values() {
        *sizes.entry(category).or_insert(0) += 1;
    }
    for category in sizes.keys() {
        if !class_of.contains_key(*category) {
            return Err(BuilderError::MissingClass((*category).clone()));
        }
    }

    let tail = panel.tail(window);
    let categories: Vec<CategoryId> = sizes.keys().map(|c| (*c).clone()).collect();
    let level = TaxonomyLevel {
        categories: categories.clone(),
        assignment: LevelAssignment::Binary(assignment.clone()),
        parent_map: None,
    };
    let averages = category_average_returns(&tail, &level)?;

    let mut new_assignment = assignment.clone();
    let mut new_class_of = class_of.clone();
    let mut moves = Vec::new();
    for (category, &size) in &sizes {
        if size >= n_star {
            continue;
        }
        let class = &class_of[*category];
        let candidates: Vec<&CategoryId> = sizes
            .iter()
            .filter(|(b, &n)| n >= n_star && &class_of[**b] == class)
            .map(|(b, _)| *b)
            .collect();
        let mut members: Vec<&EtfId> = assignment
            .iter()
            .filter(|(_, c)| c == category)
            .map(|(e, _)| e)
            .collect();
        members.sort();

        if candidates.is_empty() {
            let merged = other_category(class);
            new_class_of.insert(merged.clone(), class.clone());
            for etf in members {
                new_assignment.insert(etf.clone(), merged.clone());
                moves.push(ReclassMove {
                    etf: etf.clone(),
                    from: (*category).clone(),
                    candidates: Vec::new(),
                    to: merged.clone(),
                    rule: ReclassRule::MergedOther,
                });
            }
            continue;
        }

        for etf in members {
            let row = tail.row_index(etf);
            let rhos: Vec<(CategoryId, Option<f64>)> = candidates
                .iter()
                .map(|b| {
                    let rho = row.and_then(|i| {
                        let a = averages.row_index(b).expect("candidate has an average row");
                        pairwise_correlation(&tail, i, &averages, a)
                    });
                    ((*b).clone(), rho)
                })
                .collect();
            // strict improvement keeps the first (lexicographically
            // smallest) candidate on ties
            let mut best: Option<(&CategoryId, f64)> = None;
            for (b, rho) in &rhos {
                if let Some(r) = rho {
                    if best.is_none_or(|(_, br)| *r > br) {
                        best = Some((b, *r));
                    }
                }
            }
            let (to, rule) = match best {
                Some((b, _)) => (b.clone(), ReclassRule::MaxCorrelation),
                None => {
                    let mut largest = candidates[0];
                    for b in &candidates[1..] {
                        if sizes[*b] > sizes[largest] {
                            largest = b;
                        }
                    }
                    (largest.clone(), ReclassRule::LargestCandidate)
                }
            };
            new_assignment.insert(etf.clone(), to.clone());
            moves.push(ReclassMove {
                etf: etf.clone(),
                from: (*category).clone(),
                candidates: rhos,
                to,
                rule,
            });
        }
    }

    new_class_of.retain(|c, _| new_assignment.values().any(|v| v == c));
    Ok(Reclassified {
        assignment: new_assignment,
        class_of: new_class_of,
        report: ReclassReport { moves },
    })
}

/// Pearson correlation between a panel row and an averages row over the
/// dates where both are present. `None` below the overlap minimum or when
/// either series is constant on the overlap.
fn pairwise_correlation(
    panel: &ReturnsPanel,
    i: usize,
    averages: &super::CategoryAverages,
    a: usize,
) -> Option<f64> {
    let mut pairs = Vec::new();
    for s in 0..panel.n_dates() {
        if !panel.missing[(i, s)] && !averages.missing[(a, s)] {
            pairs.push((panel.values[(i, s)], averages.values[(a, s)]));
        }
    }
    if pairs.len() < MIN_CORRELATION_OVERLAP {
        return None;
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &pairs {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
