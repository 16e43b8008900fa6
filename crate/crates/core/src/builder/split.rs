//! Category splitting with dollar-volume gating.
//!
//! A category containing ETFs with several distinct labels (asset classes,
//! or attribute buckets) is either kept intact under its dominant label or
//! split into one subcategory per label, decided by the labels' shares of
//! the category's total ADDV: only when more than one label's share exceeds
//! the threshold is the category split. Shares depend on ADDV only through
//! their ratios, so rescaling all volumes changes no decision.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::ids::{CategoryId, EtfId};
use crate::types::EtfAssetClass;

#[derive(Debug, Clone, PartialEq)]
pub enum SplitOutcome {
    /// Single label present; nothing to do.
    Kept,
    /// Multiple labels, but at most one share above the threshold: kept
    /// intact under the dominant label.
    Relabeled,
    /// Multiple shares above the threshold: one subcategory per label.
    Split,
    /// Too few targeted members to consider splitting.
    BelowMinimum { targeted: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDecision {
    pub category: CategoryId,
    /// Share of category ADDV per label present, sorted by label. Sums to 1.
    pub shares: Vec<(String, f64)>,
    pub outcome: SplitOutcome,
    /// Resolved label for `Kept`/`Relabeled` outcomes.
    pub label: Option<String>,
    /// Category ids after the decision (the original id unless split).
    pub resulting: Vec<CategoryId>,
    /// Shares came from member counts because the category ADDV was zero.
    pub count_fallback: bool,
}

impl fmt::Display for SplitDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.category)?;
        match &self.outcome {
            SplitOutcome::Kept => write!(f, "kept ({})", self.label.as_deref().unwrap_or("?")),
            SplitOutcome::Relabeled => {
                write!(
                    f,
                    "relabeled {} (shares{}{})",
                    self.label.as_deref().unwrap_or("?"),
                    self.shares
                        .iter()
                        .map(|(l, s)| format!(" {l}={s:.4}"))
                        .collect::<String>(),
                    if self.count_fallback { "; zero ADDV, count shares" } else { "" },
                )
            }
            SplitOutcome::Split => {
                write!(
                    f,
                    "split ->{} (shares{}{})",
                    self.resulting
                        .iter()
                        .map(|c| format!(" {c}"))
                        .collect::<String>(),
                    self.shares
                        .iter()
                        .map(|(l, s)| format!(" {l}={s:.4}"))
                        .collect::<String>(),
                    if self.count_fallback { "; zero ADDV, count shares" } else { "" },
                )
            }
            SplitOutcome::BelowMinimum { targeted } => {
                write!(f, "untouched ({targeted} targeted members below minimum)")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    /// One decision per category, sorted by category id.
    pub decisions: Vec<SplitDecision>,
}

impl SplitReport {
    pub fn lines(&self) -> Vec<String> {
        self.decisions.iter().map(|d| d.to_string()).collect()
    }

    pub fn decision(&self, category: &CategoryId) -> Option<&SplitDecision> {
        self.decisions.iter().find(|d| &d.category == category)
    }
}

/// Result of [`split_categories_by_assetclass`]: the rewritten assignment
/// plus the asset class every resulting category maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplit {
    pub assignment: BTreeMap<EtfId, CategoryId>,
    /// Resulting category -> asset-class category id.
    pub class_of: BTreeMap<CategoryId, CategoryId>,
    pub report: SplitReport,
}

struct LabeledSplit {
    assignment: BTreeMap<EtfId, CategoryId>,
    /// Resulting category -> resolved label (dominant label, or the
    /// subcategory's own label). Absent for `BelowMinimum` categories.
    label_of: BTreeMap<CategoryId, String>,
    report: SplitReport,
}

/// Minimum targeted-member count plus the membership test for that count.
type SplitGate<'a> = (usize, &'a dyn Fn(&EtfId) -> bool);

/// Shared splitting core. `gate` carries the minimum targeted-member count
/// and the membership test; `None` disables gating.
fn split_by_label(
    assignment: &BTreeMap<EtfId, CategoryId>,
    label_of: &dyn Fn(&EtfId) -> String,
    addv_of: &dyn Fn(&EtfId) -> f64,
    vtilde_star: f64,
    gate: Option<SplitGate<'_>>,
) -> LabeledSplit {
    let mut members: BTreeMap<&CategoryId, Vec<&EtfId>> = BTreeMap::new();
    for (etf, category) in assignment {
        members.entry(category).or_default().push(etf);
    }

    let mut out_assignment = BTreeMap::new();
    let mut out_labels = BTreeMap::new();
    let mut decisions = Vec::new();
    for (category, etfs) in members {
        if let Some((minimum, in_target)) = gate {
            let targeted = etfs.iter().filter(|e| in_target(e)).count();
            if targeted < minimum {
                for etf in &etfs {
                    out_assignment.insert((*etf).clone(), category.clone());
                }
                decisions.push(SplitDecision {
                    category: category.clone(),
                    shares: Vec::new(),
                    outcome: SplitOutcome::BelowMinimum { targeted },
                    label: None,
                    resulting: vec![category.clone()],
                    count_fallback: false,
                });
                continue;
            }
        }

        let labels: Vec<String> = etfs.iter().map(|e| label_of(e)).collect();
        let distinct: BTreeSet<&String> = labels.iter().collect();
        if distinct.len() == 1 {
            let label = labels[0].clone();
            for etf in &etfs {
                out_assignment.insert((*etf).clone(), category.clone());
            }
            out_labels.insert(category.clone(), label.clone());
            decisions.push(SplitDecision {
                category: category.clone(),
                shares: vec![(label.clone(), 1.0)],
                outcome: SplitOutcome::Kept,
                label: Some(label),
                resulting: vec![category.clone()],
                count_fallback: false,
            });
            continue;
        }

        // ADDV share per label; zero total falls back to member counts
        let mut volume: BTreeMap<&String, f64> = BTreeMap::new();
        let mut count: BTreeMap<&String, usize> = BTreeMap::new();
        for (etf, label) in etfs.iter().zip(&labels) {
            *volume.entry(label).or_insert(0.0) += addv_of(etf).max(0.0);
            *count.entry(label).or_insert(0) += 1;
        }
        let total: f64 = volume.values().sum();
        let count_fallback = total <= 0.0;
        let shares: Vec<(String, f64)> = if count_fallback {
            count
                .iter()
                .map(|(l, c)| ((*l).clone(), *c as f64 / etfs.len() as f64))
                .collect()
        } else {
            volume
                .iter()
                .map(|(l, v)| ((*l).clone(), v / total))
                .collect()
        };

        let over: Vec<&String> = shares
            .iter()
            .filter(|(_, s)| *s > vtilde_star)
            .map(|(l, _)| l)
            .collect();
        if over.len() > 1 {
            let mut resulting = BTreeSet::new();
            for (etf, label) in etfs.iter().zip(&labels) {
                let child = CategoryId::new(format!("{category}.{label}"));
                out_labels.insert(child.clone(), label.clone());
                resulting.insert(child.clone());
                out_assignment.insert((*etf).clone(), child);
            }
            decisions.push(SplitDecision {
                category: category.clone(),
                shares,
                outcome: SplitOutcome::Split,
                label: None,
                resulting: resulting.into_iter().collect(),
                count_fallback,
            });
        } else {
            // dominant label: the sole one over the threshold, else the
            // largest share (first label in sort order on ties)
            let dominant = over
                .first()
                .map(|l| (*l).clone())
                .unwrap_or_else(|| {
                    let mut best = shares[0].clone();
                    for (l, s) in &shares[1..] {
                        if *s > best.1 {
                            best = (l.clone(), *s);
                        }
                    }
                    best.0
                });
            for etf in &etfs {
                out_assignment.insert((*etf).clone(), category.clone());
            }
            out_labels.insert(category.clone(), dominant.clone());
            decisions.push(SplitDecision {
                category: category.clone(),
                shares,
                outcome: SplitOutcome::Relabeled,
                label: Some(dominant),
                resulting: vec![category.clone()],
                count_fallback,
            });
        }
    }
    LabeledSplit {
        assignment: out_assignment,
        label_of: out_labels,
        report: SplitReport { decisions },
    }
}

/// Splits categories containing more than one asset class, gated by ADDV
/// shares: when more than one class's share exceeds `vtilde_star` the
/// category splits into one `Category.Class` subcategory per class present;
/// otherwise it is kept intact under the dominant class. Missing ADDV
/// enters as 0.
pub fn split_categories_by_assetclass<L, V>(
    assignment: &BTreeMap<EtfId, CategoryId>,
    class_of_etf: L,
    addv_of: V,
    vtilde_star: f64,
) -> ClassSplit
where
    L: Fn(&EtfId) -> EtfAssetClass,
    V: Fn(&EtfId) -> f64,
{
    let label = |e: &EtfId| class_of_etf(e).name().to_owned();
    let split = split_by_label(assignment, &label, &addv_of, vtilde_star, None);
    let class_of = split
        .label_of
        .iter()
        .map(|(c, l)| (c.clone(), CategoryId::new(l.clone())))
        .collect();
    ClassSplit {
        assignment: split.assignment,
        class_of,
        report: split.report,
    }
}

/// Splits categories by an attribute bucket (duration, credit group, ...)
/// with the same ADDV gating, skipping categories with fewer than `m_star`
/// members in the targeted population. ETFs without the attribute land in
/// an `unknown` bucket.
pub fn split_by_attribute<B, T, V>(
    assignment: &BTreeMap<EtfId, CategoryId>,
    bucket_of: B,
    in_target: T,
    addv_of: V,
    vtilde_star: f64,
    m_star: usize,
) -> (BTreeMap<EtfId, CategoryId>, SplitReport)
where
    B: Fn(&EtfId) -> Option<String>,
    T: Fn(&EtfId) -> bool,
    V: Fn(&EtfId) -> f64,
{
    let label = |e: &EtfId| bucket_of(e).unwrap_or_else(|| "unknown".to_owned());
    let split = split_by_label(
        assignment,
        &label,
        &addv_of,
        vtilde_star,
        Some((m_star, &in_target)),
    );
    (split.assignment, split.report)
}
