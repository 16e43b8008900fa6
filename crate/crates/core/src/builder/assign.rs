//! Category assignment for ETFs the provider left unclassified.

use std::collections::BTreeMap;

use crate::builder::other_category;
use crate::ids::{CategoryId, EtfId};
use crate::types::{EtfAssetClass, ETF_ATTRIBUTE_KEYS};

#[derive(Debug, Clone, PartialEq)]
pub struct NaAssignment {
    pub etf: EtfId,
    pub category: CategoryId,
    /// Members of the chosen category matching the ETF on every present
    /// attribute; 0 when the assignment fell back to the catch-all.
    pub matching_members: usize,
    pub fallback: bool,
}

impl std::fmt::Display for NaAssignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.fallback {
            write!(f, "{} -> {} (no attribute match)", self.etf, self.category)
        } else {
            write!(
                f,
                "{} -> {} ({} matching members)",
                self.etf, self.category, self.matching_members
            )
        }
    }
}

/// Assigns each unclassified ETF to the category whose members best match
/// it on the attributes it carries (cap tranche, style, region, duration
/// bucket). Candidates are ranked by matching-member count, then total
/// member count, then category id; an ETF matching no member of any
/// category falls back to its asset class's catch-all category.
///
/// All unclassified ETFs are matched against the same snapshot of
/// `classified`, so the outcome does not depend on processing order.
pub fn assign_na_categories<A, C>(
    unclassified: &[EtfId],
    classified: &BTreeMap<EtfId, CategoryId>,
    attribute_of: A,
    class_of: C,
) -> (BTreeMap<EtfId, CategoryId>, Vec<NaAssignment>)
where
    A: Fn(&EtfId, &str) -> Option<String>,
    C: Fn(&EtfId) -> EtfAssetClass,
{
    let mut members: BTreeMap<&CategoryId, Vec<&EtfId>> = BTreeMap::new();
    for (etf, category) in classified {
        members.entry(category).or_default().push(etf);
    }

    let mut etfs: Vec<&EtfId> = unclassified.iter().collect();
    etfs.sort();
    etfs.dedup();

    let mut assignments = BTreeMap::new();
    let mut report = Vec::new();
    for etf in etfs {
        let attrs: Vec<(&str, String)> = ETF_ATTRIBUTE_KEYS
            .iter()
            .filter_map(|key| attribute_of(etf, key).map(|v| (*key, v)))
            .collect();
        // rank candidates by (matching members, total members), first
        // category id winning ties; only categories with at least one
        // matching member qualify
        let mut best: Option<(&CategoryId, usize, usize)> = None;
        for (category, etfs_in) in &members {
            let matching = etfs_in
                .iter()
                .filter(|m| {
                    attrs
                        .iter()
                        .all(|(key, v)| attribute_of(m, key).as_deref() == Some(v))
                })
                .count();
            if matching == 0 {
                continue;
            }
            let total = etfs_in.len();
            let better = match best {
                None => true,
                Some((_, bm, bt)) => matching > bm || (matching == bm && total > bt),
            };
            if better {
                best = Some((category, matching, total));
            }
        }
        let (category, matching, fallback) = match best {
            Some((category, matching, _)) => (category.clone(), matching, false),
            None => (
                other_category(&class_of(etf).category_id()),
                0,
                true,
            ),
        };
        assignments.insert(etf.clone(), category.clone());
        report.push(NaAssignment {
            etf: etf.clone(),
            category,
            matching_members: matching,
            fallback,
        });
    }
    (assignments, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::AssetClass;

    fn classified(entries: &[(&str, &str)]) -> BTreeMap<EtfId, CategoryId> {
        entries
            .iter()
            .map(|(e, c)| (EtfId::new(*e), CategoryId::new(*c)))
            .collect()
    }

    /// Attribute lookup from a (etf, key) -> value table.
    fn attrs<'a>(
        table: &'a [(&'a str, &'a str, &'a str)],
    ) -> impl Fn(&EtfId, &str) -> Option<String> + 'a {
        move |etf, key| {
            table
                .iter()
                .find(|(e, k, _)| *e == etf.as_str() && *k == key)
                .map(|(_, _, v)| (*v).to_owned())
        }
    }

    const MULTI: EtfAssetClass = EtfAssetClass::MultiAsset;

    #[test]
    fn single_matching_category_wins() {
        let classified = classified(&[("A1", "CatA"), ("B1", "CatB")]);
        let table = [
            ("X", "region", "US"),
            ("A1", "region", "US"),
            ("B1", "region", "EU"),
        ];
        let (assigned, report) = assign_na_categories(
            &[EtfId::new("X")],
            &classified,
            attrs(&table),
            |_| MULTI,
        );
        assert_eq!(assigned[&EtfId::new("X")], CategoryId::new("CatA"));
        assert!(!report[0].fallback);
        assert_eq!(report[0].matching_members, 1);
    }

    #[test]
    fn more_matching_members_beats_fewer() {
        let classified = classified(&[
            ("A1", "Big"),
            ("A2", "Big"),
            ("A3", "Big"),
            ("A4", "Big"),
            ("A5", "Big"),
            ("B1", "Small"),
            ("B2", "Small"),
            ("B3", "Small"),
        ]);
        // every peer matches: X carries no attributes at all, so ranking is
        // by member count
        let (assigned, _) = assign_na_categories(
            &[EtfId::new("X")],
            &classified,
            |_, _| None,
            |_| MULTI,
        );
        assert_eq!(assigned[&EtfId::new("X")], CategoryId::new("Big"));
    }

    #[test]
    fn tie_on_matches_falls_to_total_members_then_id() {
        // one matching member in each of CatA and CatB; CatB is bigger
        let classified = classified(&[("A1", "CatA"), ("B1", "CatB"), ("B2", "CatB")]);
        let table = [
            ("X", "style", "Value"),
            ("A1", "style", "Value"),
            ("B1", "style", "Value"),
            ("B2", "style", "Growth"),
        ];
        let (assigned, _) = assign_na_categories(
            &[EtfId::new("X")],
            &classified,
            attrs(&table),
            |_| MULTI,
        );
        assert_eq!(assigned[&EtfId::new("X")], CategoryId::new("CatB"));

        // full tie: equal matches and equal sizes -> first id
        let classified = classified_tie();
        let table = [
            ("X", "style", "Value"),
            ("A1", "style", "Value"),
            ("B1", "style", "Value"),
        ];
        let (assigned, _) = assign_na_categories(
            &[EtfId::new("X")],
            &classified,
            attrs(&table),
            |_| MULTI,
        );
        assert_eq!(assigned[&EtfId::new("X")], CategoryId::new("CatA"));
    }

    fn classified_tie() -> BTreeMap<EtfId, CategoryId> {
        classified(&[("A1", "CatA"), ("B1", "CatB")])
    }

    #[test]
    fn no_match_anywhere_falls_back_to_other() {
        let classified = classified(&[("A1", "CatA")]);
        let table = [("X", "region", "JP"), ("A1", "region", "US")];
        let (assigned, report) = assign_na_categories(
            &[EtfId::new("X")],
            &classified,
            attrs(&table),
            |_| EtfAssetClass::Single(AssetClass::Volatility),
        );
        assert_eq!(
            assigned[&EtfId::new("X")],
            CategoryId::new("Volatility - Other")
        );
        assert!(report[0].fallback);
    }

    #[test]
    fn all_present_attributes_must_match() {
        let classified = classified(&[("A1", "CatA"), ("B1", "CatB")]);
        // A1 matches region but not style; B1 matches both
        let table = [
            ("X", "region", "US"),
            ("X", "style", "Value"),
            ("A1", "region", "US"),
            ("A1", "style", "Growth"),
            ("B1", "region", "US"),
            ("B1", "style", "Value"),
        ];
        let (assigned, _) = assign_na_categories(
            &[EtfId::new("X")],
            &classified,
            attrs(&table),
            |_| MULTI,
        );
        assert_eq!(assigned[&EtfId::new("X")], CategoryId::new("CatB"));
    }
}
