//! Model builders. Both constructions share one recursive engine that
//! models the covariance of a set of return series as
//! `diag(ξ²σ²) + (diag(σ) U/γ) Φ (…)ᵀ` in correlation space:
//!
//! 1. standardize the rows;
//! 2. form loadings `U` for the current level (block first principal
//!    components of the sample correlation, indicator columns, or an
//!    explicit weight matrix);
//! 3. compute factor returns `f = Uᵀ X̂` and model *their* covariance with
//!    the remaining levels, bottoming out at a PSD-clipped sample
//!    covariance;
//! 4. set residual variances `ξ² = 1 − (UΦUᵀ)_ii`, rescaling rows whose
//!    factor part overshoots (`γ_i > 1`) so the residual lands exactly on
//!    the floor — the model correlation diagonal is 1 exactly;
//! 5. rescale to variance space with the sample volatilities.
//!
//! The heterotic construction runs this with taxonomy blocks at two
//! levels; the general construction runs it with an explicit exposure
//! matrix and a sample-covariance factor level.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::exposure::ExposureMatrix;
use crate::ids::{CategoryId, EtfId};
use crate::model::stats::{
    clip_to_psd, first_principal_component, sample_covariance, standardize_rows,
};
use crate::model::{Exclusion, ModelError, RiskModel};
use crate::panel::ReturnsPanel;
use crate::taxonomy::{LevelAssignment, Taxonomy};

/// Correlation-space floor for specific variances. Keeps the model
/// covariance strictly positive definite so it is always invertible.
pub const SPECIFIC_VAR_FLOOR: f64 = 1e-8;

/// Loadings rows (Eq.-5-style exposure rows) must sum to 1 within this.
const LOADING_ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeteroticOptions {
    /// Use block first principal components as level-1 loadings; `false`
    /// uses plain indicator columns. The nested factor covariance always
    /// uses principal components.
    pub pc_loadings: bool,
    /// Model the level-1 factor covariance with the second taxonomy level;
    /// `false` stops at the sample covariance of level-1 factor returns.
    pub nested_factor_cov: bool,
}

impl Default for HeteroticOptions {
    fn default() -> Self {
        Self {
            pc_loadings: true,
            nested_factor_cov: true,
        }
    }
}

enum LevelSpec {
    /// Partition of the current rows into category blocks.
    Blocks {
        groups: Vec<(CategoryId, Vec<usize>)>,
        pc: bool,
    },
    /// Explicit loadings onto named factors.
    Loadings {
        names: Vec<CategoryId>,
        w: DMatrix<f64>,
    },
}

impl LevelSpec {
    fn names(&self) -> Vec<CategoryId> {
        match self {
            LevelSpec::Blocks { groups, .. } => groups.iter().map(|(c, _)| c.clone()).collect(),
            LevelSpec::Loadings { names, .. } => names.clone(),
        }
    }
}

/// One level's calibrated output: everything needed to assemble either a
/// `RiskModel` (at the ETF level) or a dense modeled covariance (as the
/// factor covariance of the level below).
struct Factored {
    sigma: DVector<f64>,
    u: DMatrix<f64>,
    beta: DMatrix<f64>,
    phi: DMatrix<f64>,
    xi2: DVector<f64>,
    gamma: DVector<f64>,
    names: Vec<CategoryId>,
}

impl Factored {
    fn dense_cov(&self) -> DMatrix<f64> {
        let n = self.sigma.len();
        let scaled = DMatrix::from_fn(n, self.beta.ncols(), |i, a| {
            self.sigma[i] * self.beta[(i, a)]
        });
        let mut cov = &scaled * &self.phi * scaled.transpose();
        for i in 0..n {
            cov[(i, i)] += self.xi2[i] * self.sigma[i] * self.sigma[i];
        }
        cov
    }
}

enum CovModel {
    Dense(DMatrix<f64>),
    Factored(Box<Factored>),
}

impl CovModel {
    fn dense(&self) -> DMatrix<f64> {
        match self {
            CovModel::Dense(m) => m.clone(),
            CovModel::Factored(f) => f.dense_cov(),
        }
    }
}

/// Models the covariance of the rows of `x` using the remaining `levels`.
/// `labels` name the rows for error reporting.
fn model_rows(
    x: &DMatrix<f64>,
    labels: &[CategoryId],
    levels: &[LevelSpec],
) -> Result<CovModel, ModelError> {
    let n = x.nrows();
    let t = x.ncols();
    let Some((level, rest)) = levels.split_first() else {
        // top level: plain sample covariance, which needs enough dates to
        // be full rank for generic data
        if n >= t.saturating_sub(1) {
            return Err(ModelError::TopLevelTooLarge {
                factors: n,
                lookback: t,
            });
        }
        return Ok(CovModel::Dense(clip_to_psd(&sample_covariance(x))));
    };

    let (xhat, sigma) = standardize_rows(x);
    for i in 0..n {
        if sigma[i] == 0.0 {
            return Err(ModelError::ZeroVarianceFactor {
                factor: labels[i].clone(),
            });
        }
    }

    let names = level.names();
    let k = names.len();
    let u = match level {
        LevelSpec::Blocks { groups, pc } => {
            let mut u = DMatrix::zeros(n, k);
            for (a, (_, members)) in groups.iter().enumerate() {
                if *pc {
                    let block = block_correlation(&xhat, members);
                    let component = first_principal_component(&block);
                    for (p, &i) in members.iter().enumerate() {
                        u[(i, a)] = component[p];
                    }
                } else {
                    for &i in members {
                        u[(i, a)] = 1.0;
                    }
                }
            }
            u
        }
        LevelSpec::Loadings { w, .. } => w.clone(),
    };

    let f = u.transpose() * &xhat;
    let phi = model_rows(&f, &names, rest)?.dense();

    // calibrate: residual in correlation space, floored by rescaling rows
    let u_phi = &u * &phi;
    let mut beta = u.clone();
    let mut xi2 = DVector::zeros(n);
    let mut gamma = DVector::from_element(n, 1.0);
    for i in 0..n {
        let b_ii: f64 = (0..k).map(|a| u_phi[(i, a)] * u[(i, a)]).sum();
        if 1.0 - b_ii >= SPECIFIC_VAR_FLOOR {
            xi2[i] = 1.0 - b_ii;
        } else {
            let g = (b_ii / (1.0 - SPECIFIC_VAR_FLOOR)).sqrt();
            gamma[i] = g;
            xi2[i] = SPECIFIC_VAR_FLOOR;
            for a in 0..k {
                beta[(i, a)] /= g;
            }
        }
    }

    Ok(CovModel::Factored(Box::new(Factored {
        sigma,
        u,
        beta,
        phi,
        xi2,
        gamma,
        names,
    })))
}

fn block_correlation(xhat: &DMatrix<f64>, members: &[usize]) -> DMatrix<f64> {
    let denom = (xhat.ncols() - 1) as f64;
    let m = members.len();
    let mut corr = DMatrix::identity(m, m);
    for p in 0..m {
        for q in (p + 1)..m {
            let dot: f64 = xhat.row(members[p]).dot(&xhat.row(members[q]));
            let value = dot / denom;
            corr[(p, q)] = value;
            corr[(q, p)] = value;
        }
    }
    corr
}

struct PreparedPanel {
    universe: Vec<EtfId>,
    x: DMatrix<f64>,
    excluded: Vec<(EtfId, Exclusion)>,
}

/// Windows the panel, checks completeness, restricts to classified rows,
/// and drops zero-variance rows.
fn prepare_panel<C>(
    panel: &ReturnsPanel,
    lookback: usize,
    classified: C,
) -> Result<PreparedPanel, ModelError>
where
    C: Fn(&EtfId) -> bool,
{
    if lookback > panel.n_dates() {
        return Err(ModelError::LookbackTooLong {
            lookback,
            available: panel.n_dates(),
        });
    }
    if lookback < 2 {
        return Err(ModelError::TooFewDates(lookback));
    }
    let window = panel.tail(lookback);
    for i in 0..window.n_etfs() {
        for s in 0..window.n_dates() {
            if window.missing[(i, s)] {
                return Err(ModelError::PanelIncomplete {
                    etf: window.etf_ids[i].clone(),
                    date: window.dates[s],
                });
            }
        }
    }
    let mut excluded = Vec::new();
    let mut rows = Vec::new();
    for (i, etf) in window.etf_ids.iter().enumerate() {
        if classified(etf) {
            rows.push(i);
        } else {
            excluded.push((etf.clone(), Exclusion::NotClassified));
        }
    }
    // drop rows a model cannot standardize; a constant series has zero
    // variance up to rounding of its mean, so test for constancy directly
    let mut universe = Vec::new();
    let mut kept_rows = Vec::new();
    for i in rows {
        let first = window.values[(i, 0)];
        if (1..window.n_dates()).all(|s| window.values[(i, s)] == first) {
            excluded.push((window.etf_ids[i].clone(), Exclusion::ZeroVariance));
        } else {
            universe.push(window.etf_ids[i].clone());
            kept_rows.push(i);
        }
    }
    if universe.is_empty() {
        return Err(ModelError::EmptyUniverse);
    }
    let x = DMatrix::from_fn(kept_rows.len(), window.n_dates(), |r, s| {
        window.values[(kept_rows[r], s)]
    });
    Ok(PreparedPanel {
        universe,
        x,
        excluded,
    })
}

fn assemble(prepared: PreparedPanel, factored: Factored) -> RiskModel {
    let n = prepared.universe.len();
    let k = factored.names.len();
    let omega = DMatrix::from_fn(n, k, |i, a| factored.sigma[i] * factored.u[(i, a)]);
    RiskModel {
        etf_ids: prepared.universe,
        factor_ids: factored.names,
        omega,
        beta: factored.beta,
        factor_cov: factored.phi,
        specific_var: factored.xi2,
        total_var: factored.sigma.map(|s| s * s),
        gamma: factored.gamma,
        excluded: prepared.excluded,
    }
}

/// Builds the nested-taxonomy model: per level-1 category, the loading
/// column is the first principal component of that block of the sample
/// correlation matrix; the level-1 factor covariance is modeled the same
/// way one level up (blocks by asset class), bottoming out at the sample
/// covariance of the top-level factors.
///
/// ETFs missing from the classification, absent from the panel, or with
/// zero variance over the lookback are excluded and recorded on the model.
pub fn build_heterotic(
    taxonomy: &Taxonomy,
    panel: &ReturnsPanel,
    lookback: usize,
    options: HeteroticOptions,
) -> Result<RiskModel, ModelError> {
    if taxonomy.n_levels() != 2 {
        return Err(ModelError::TaxonomyShape(format!(
            "expected 2 levels, found {}",
            taxonomy.n_levels()
        )));
    }
    let LevelAssignment::Binary(level1) = &taxonomy.level(0).assignment else {
        return Err(ModelError::TaxonomyShape("level 1 is weighted".to_owned()));
    };
    let parent_map = taxonomy
        .level(0)
        .parent_map
        .as_ref()
        .expect("2-level taxonomy has a level-1 parent map");
    if !matches!(taxonomy.level(1).assignment, LevelAssignment::Binary(_)) {
        return Err(ModelError::TaxonomyShape("level 2 is weighted".to_owned()));
    }

    let prepared = prepare_panel(panel, lookback, |etf| level1.contains_key(etf))?;
    let mut excluded = prepared.excluded.clone();
    for etf in taxonomy.etf_ids() {
        if !prepared.universe.contains(&etf)
            && !excluded.iter().any(|(e, _)| *e == etf)
        {
            excluded.push((etf, Exclusion::NoReturns));
        }
    }

    // level-1 blocks over universe rows, sorted by category id
    let mut by_category: BTreeMap<&CategoryId, Vec<usize>> = BTreeMap::new();
    for (i, etf) in prepared.universe.iter().enumerate() {
        by_category.entry(&level1[etf]).or_default().push(i);
    }
    let groups1: Vec<(CategoryId, Vec<usize>)> = by_category
        .into_iter()
        .map(|(c, rows)| (c.clone(), rows))
        .collect();

    let mut levels = vec![LevelSpec::Blocks {
        groups: groups1.clone(),
        pc: options.pc_loadings,
    }];
    if options.nested_factor_cov {
        // level-2 blocks over the level-1 factor axis, by parent class;
        // the nesting always uses principal components, regardless of how
        // the level-1 loadings were built
        let mut by_class: BTreeMap<&CategoryId, Vec<usize>> = BTreeMap::new();
        for (a, (category, _)) in groups1.iter().enumerate() {
            by_class.entry(&parent_map[category]).or_default().push(a);
        }
        levels.push(LevelSpec::Blocks {
            groups: by_class
                .into_iter()
                .map(|(c, idx)| (c.clone(), idx))
                .collect(),
            pc: true,
        });
    }

    let labels: Vec<CategoryId> = prepared
        .universe
        .iter()
        .map(|e| CategoryId::new(e.as_str()))
        .collect();
    let factored = match model_rows(&prepared.x, &labels, &levels)? {
        CovModel::Factored(f) => *f,
        CovModel::Dense(_) => unreachable!("at least one level supplied"),
    };
    let prepared = PreparedPanel { excluded, ..prepared };
    Ok(assemble(prepared, factored))
}

/// Builds the general-construction model: loadings are an explicit
/// exposure matrix whose rows sum to 1, and the factor covariance is the
/// PSD-clipped sample covariance of the factor returns — unless
/// `factor_parents` supplies a grouping of the factor axis, in which case
/// the factor covariance is modeled one level up as in the nested build.
pub fn build_general(
    exposures: &ExposureMatrix,
    panel: &ReturnsPanel,
    lookback: usize,
    factor_parents: Option<&BTreeMap<CategoryId, CategoryId>>,
) -> Result<RiskModel, ModelError> {
    let in_w: std::collections::BTreeSet<&EtfId> = exposures.etf_ids.iter().collect();
    let prepared = prepare_panel(panel, lookback, |etf| in_w.contains(etf))?;
    let mut excluded = prepared.excluded.clone();
    for etf in &exposures.etf_ids {
        if !prepared.universe.contains(etf) && !excluded.iter().any(|(e, _)| e == etf) {
            excluded.push((etf.clone(), Exclusion::NoReturns));
        }
    }

    let k = exposures.n_categories();
    let mut w = DMatrix::zeros(prepared.universe.len(), k);
    for (r, etf) in prepared.universe.iter().enumerate() {
        let i = exposures
            .etf_index(etf)
            .expect("universe is restricted to exposure rows");
        let mut sum = 0.0;
        for a in 0..k {
            w[(r, a)] = exposures.w[(i, a)];
            sum += exposures.w[(i, a)];
        }
        if (sum - 1.0).abs() > LOADING_ROW_TOL {
            return Err(ModelError::LoadingRowSum {
                etf: etf.clone(),
                sum,
            });
        }
    }

    let mut levels = vec![LevelSpec::Loadings {
        names: exposures.category_ids.clone(),
        w,
    }];
    if let Some(parents) = factor_parents {
        let mut by_class: BTreeMap<&CategoryId, Vec<usize>> = BTreeMap::new();
        for (a, category) in exposures.category_ids.iter().enumerate() {
            if let Some(parent) = parents.get(category) {
                by_class.entry(parent).or_default().push(a);
            }
        }
        levels.push(LevelSpec::Blocks {
            groups: by_class
                .into_iter()
                .map(|(c, idx)| (c.clone(), idx))
                .collect(),
            pc: true,
        });
    }

    let labels: Vec<CategoryId> = prepared
        .universe
        .iter()
        .map(|e| CategoryId::new(e.as_str()))
        .collect();
    let factored = match model_rows(&prepared.x, &labels, &levels)? {
        CovModel::Factored(f) => *f,
        CovModel::Dense(_) => unreachable!("at least one level supplied"),
    };
    let prepared = PreparedPanel { excluded, ..prepared };
    Ok(assemble(prepared, factored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::stats::sample_variances;
    use crate::taxonomy::TaxonomyLevel;
    use chrono::NaiveDate;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dates(t: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        (0..t)
            .map(|s| start + chrono::Duration::days(s as i64))
            .collect()
    }

    fn panel_from(values: DMatrix<f64>, ids: &[&str]) -> ReturnsPanel {
        let (n, t) = values.shape();
        ReturnsPanel::new(
            ids.iter().map(|e| EtfId::new(*e)).collect(),
            dates(t),
            values,
            DMatrix::from_element(n, t, false),
        )
        .unwrap()
    }

    /// Two categories of three ETFs under two classes; noisy factor panel.
    fn two_block_fixture(t: usize, seed: u64) -> (Taxonomy, ReturnsPanel, Vec<&'static str>) {
        let ids = vec!["E1", "E2", "E3", "E4", "E5", "E6"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = DMatrix::zeros(6, t);
        for s in 0..t {
            let f1: f64 = rng.sample(StandardNormal);
            let f2: f64 = rng.sample(StandardNormal);
            for i in 0..6 {
                let factor = if i < 3 { f1 } else { f2 };
                let noise: f64 = rng.sample(StandardNormal);
                values[(i, s)] = 0.01 * (factor + 0.5 * noise);
            }
        }
        let level1 = TaxonomyLevel {
            categories: vec![CategoryId::new("C1"), CategoryId::new("C2")],
            assignment: LevelAssignment::Binary(
                ids.iter()
                    .enumerate()
                    .map(|(i, e)| {
                        (
                            EtfId::new(*e),
                            CategoryId::new(if i < 3 { "C1" } else { "C2" }),
                        )
                    })
                    .collect(),
            ),
            parent_map: Some(
                [
                    (CategoryId::new("C1"), CategoryId::new("Equity")),
                    (CategoryId::new("C2"), CategoryId::new("Bond")),
                ]
                .into_iter()
                .collect(),
            ),
        };
        let level2 = TaxonomyLevel {
            categories: vec![CategoryId::new("Bond"), CategoryId::new("Equity")],
            assignment: LevelAssignment::Binary(
                ids.iter()
                    .enumerate()
                    .map(|(i, e)| {
                        (
                            EtfId::new(*e),
                            CategoryId::new(if i < 3 { "Equity" } else { "Bond" }),
                        )
                    })
                    .collect(),
            ),
            parent_map: None,
        };
        let taxonomy = Taxonomy::new(vec![level1, level2]).unwrap();
        let panel = panel_from(values, &ids);
        (taxonomy, panel, ids)
    }

    fn min_max_eigen(m: &DMatrix<f64>) -> (f64, f64) {
        let eigen = m.clone().symmetric_eigen();
        let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eigen.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }

    #[test]
    fn diagonal_reproduces_sample_variances() {
        let (taxonomy, panel, _) = two_block_fixture(60, 7);
        let model =
            build_heterotic(&taxonomy, &panel, 60, HeteroticOptions::default()).unwrap();
        let gamma = model.covariance_matrix();
        let target = sample_variances(&panel.values);
        for i in 0..model.n_etfs() {
            let rel = (gamma[(i, i)] / target[i] - 1.0).abs();
            assert!(rel < 1e-8, "diagonal off by {rel} at {i}");
        }
        let (min, max) = min_max_eigen(&gamma);
        assert!(min >= -1e-10 * max, "min eigenvalue {min} vs max {max}");
    }

    #[test]
    fn single_category_loading_is_first_pc_of_full_correlation() {
        let ids = ["E1", "E2", "E3"];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values = DMatrix::from_fn(3, 30, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.01);
        let panel = panel_from(values.clone(), &ids);
        let level1 = TaxonomyLevel {
            categories: vec![CategoryId::new("All")],
            assignment: LevelAssignment::Binary(
                ids.iter()
                    .map(|e| (EtfId::new(*e), CategoryId::new("All")))
                    .collect(),
            ),
            parent_map: Some(
                [(CategoryId::new("All"), CategoryId::new("Top"))]
                    .into_iter()
                    .collect(),
            ),
        };
        let level2 = TaxonomyLevel {
            categories: vec![CategoryId::new("Top")],
            assignment: LevelAssignment::Binary(
                ids.iter()
                    .map(|e| (EtfId::new(*e), CategoryId::new("Top")))
                    .collect(),
            ),
            parent_map: None,
        };
        let taxonomy = Taxonomy::new(vec![level1, level2]).unwrap();
        let model =
            build_heterotic(&taxonomy, &panel, 30, HeteroticOptions::default()).unwrap();
        let expected = first_principal_component(&sample_correlation_of(&values));
        let sigma = model.total_var.map(|v| v.sqrt());
        for i in 0..3 {
            let u = model.omega[(i, 0)] / sigma[i];
            assert!((u - expected[i]).abs() < 1e-10);
        }
    }

    fn sample_correlation_of(values: &DMatrix<f64>) -> DMatrix<f64> {
        crate::model::stats::sample_correlation(values)
    }

    #[test]
    fn zero_noise_factor_panel_reproduces_sample_covariance() {
        // returns generated exactly as a 2-factor model, no idiosyncratic noise
        let ids = ["E1", "E2", "E3", "E4"];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 50;
        let mut values = DMatrix::zeros(4, t);
        let loadings = [1.0, 0.7, 1.2, 0.9];
        for s in 0..t {
            let f1: f64 = rng.sample(StandardNormal);
            let f2: f64 = rng.sample(StandardNormal);
            for i in 0..4 {
                let factor = if i < 2 { f1 } else { f2 };
                values[(i, s)] = 0.01 * loadings[i] * factor;
            }
        }
        let panel = panel_from(values.clone(), &ids);
        let level1 = TaxonomyLevel {
            categories: vec![CategoryId::new("A"), CategoryId::new("B")],
            assignment: LevelAssignment::Binary(
                ids.iter()
                    .enumerate()
                    .map(|(i, e)| {
                        (EtfId::new(*e), CategoryId::new(if i < 2 { "A" } else { "B" }))
                    })
                    .collect(),
            ),
            parent_map: Some(
                [
                    (CategoryId::new("A"), CategoryId::new("TopA")),
                    (CategoryId::new("B"), CategoryId::new("TopB")),
                ]
                .into_iter()
                .collect(),
            ),
        };
        let level2 = TaxonomyLevel {
            categories: vec![CategoryId::new("TopA"), CategoryId::new("TopB")],
            assignment: LevelAssignment::Binary(
                ids.iter()
                    .enumerate()
                    .map(|(i, e)| {
                        (
                            EtfId::new(*e),
                            CategoryId::new(if i < 2 { "TopA" } else { "TopB" }),
                        )
                    })
                    .collect(),
            ),
            parent_map: None,
        };
        let taxonomy = Taxonomy::new(vec![level1, level2]).unwrap();
        let model =
            build_heterotic(&taxonomy, &panel, t, HeteroticOptions::default()).unwrap();
        let modeled = model.covariance_matrix();
        let sample = sample_covariance(&values);
        let max_sample = sample.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in modeled.iter().zip(sample.iter()) {
            assert!(
                (a - b).abs() <= 1e-6 * max_sample,
                "modeled {a} vs sample {b}"
            );
        }
    }

    #[test]
    fn general_on_indicator_matches_flat_heterotic() {
        let (taxonomy, panel, ids) = two_block_fixture(40, 21);
        let level1 = match &taxonomy.level(0).assignment {
            LevelAssignment::Binary(map) => map.clone(),
            _ => unreachable!(),
        };
        let categories = taxonomy.level(0).categories.clone();
        let w = DMatrix::from_fn(ids.len(), categories.len(), |i, a| {
            if level1[&EtfId::new(ids[i])] == categories[a] {
                1.0
            } else {
                0.0
            }
        });
        let exposures = ExposureMatrix::new(
            ids.iter().map(|e| EtfId::new(*e)).collect(),
            categories,
            w,
            vec![1.0; ids.len()],
        )
        .unwrap();
        let general = build_general(&exposures, &panel, 40, None).unwrap();
        let flat = build_heterotic(
            &taxonomy,
            &panel,
            40,
            HeteroticOptions {
                pc_loadings: false,
                nested_factor_cov: false,
            },
        )
        .unwrap();
        let ga = general.covariance_matrix();
        let gb = flat.covariance_matrix();
        assert_eq!(general.etf_ids, flat.etf_ids);
        for (a, b) in ga.iter().zip(gb.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn split_loading_row_respects_bilinear_form() {
        let (_, panel, ids) = two_block_fixture(40, 5);
        let w = DMatrix::from_fn(ids.len(), 2, |i, a| match (i, a) {
            (0, 0) => 0.7,
            (0, 1) => 0.3,
            (_, 0) if i < 3 => 1.0,
            (_, 1) if i >= 3 => 1.0,
            _ => 0.0,
        });
        let exposures = ExposureMatrix::new(
            ids.iter().map(|e| EtfId::new(*e)).collect(),
            vec![CategoryId::new("C1"), CategoryId::new("C2")],
            w,
            vec![1.0; ids.len()],
        )
        .unwrap();
        let model = build_general(&exposures, &panel, 40, None).unwrap();
        // oracle: dense diag(ξ²σ²) + L Φ Lᵀ with L = diag(σ) β
        let l = model.calibrated_loadings();
        let mut oracle = &l * &model.factor_cov * l.transpose();
        for i in 0..model.n_etfs() {
            oracle[(i, i)] += model.specific_var[i] * model.total_var[i];
        }
        let gamma = model.covariance_matrix();
        for (a, b) in gamma.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loading_rows_must_sum_to_one() {
        let (_, panel, ids) = two_block_fixture(40, 9);
        let w = DMatrix::from_fn(ids.len(), 2, |_, a| if a == 0 { 0.6 } else { 0.3 });
        let exposures = ExposureMatrix::new(
            ids.iter().map(|e| EtfId::new(*e)).collect(),
            vec![CategoryId::new("C1"), CategoryId::new("C2")],
            w,
            vec![1.0; ids.len()],
        )
        .unwrap();
        assert!(matches!(
            build_general(&exposures, &panel, 40, None),
            Err(ModelError::LoadingRowSum { .. })
        ));
    }

    #[test]
    fn too_many_factors_for_lookback_is_an_error() {
        // K = 6 identity loadings with T = 5 dates: sample cov cannot be full rank
        let ids = ["E1", "E2", "E3", "E4", "E5", "E6"];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values = DMatrix::from_fn(6, 5, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.01);
        let panel = panel_from(values, &ids);
        let exposures = ExposureMatrix::new(
            ids.iter().map(|e| EtfId::new(*e)).collect(),
            (0..6).map(|i| CategoryId::new(format!("F{i}"))).collect(),
            DMatrix::identity(6, 6),
            vec![1.0; 6],
        )
        .unwrap();
        match build_general(&exposures, &panel, 5, None) {
            Err(ModelError::TopLevelTooLarge { factors, lookback }) => {
                assert_eq!(factors, 6);
                assert_eq!(lookback, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scaling_one_series_rescales_covariance_but_not_correlation() {
        let (taxonomy, panel, _) = two_block_fixture(45, 13);
        let base =
            build_heterotic(&taxonomy, &panel, 45, HeteroticOptions::default()).unwrap();
        let mut scaled_values = panel.values.clone();
        let c = 3.0;
        for s in 0..scaled_values.ncols() {
            scaled_values[(0, s)] *= c;
        }
        let scaled_panel = ReturnsPanel::new(
            panel.etf_ids.clone(),
            panel.dates.clone(),
            scaled_values,
            panel.missing.clone(),
        )
        .unwrap();
        let scaled =
            build_heterotic(&taxonomy, &scaled_panel, 45, HeteroticOptions::default()).unwrap();
        let psi_a = base.correlation_matrix();
        let psi_b = scaled.correlation_matrix();
        for (a, b) in psi_a.iter().zip(psi_b.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let cov_a = base.covariance_matrix();
        let cov_b = scaled.covariance_matrix();
        for j in 0..base.n_etfs() {
            let scale = if j == 0 { c * c } else { c };
            assert!((cov_b[(0, j)] - scale * cov_a[(0, j)]).abs() < 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn zero_variance_row_is_excluded_with_reason() {
        let (taxonomy, mut panel, _) = two_block_fixture(40, 17);
        for s in 0..panel.values.ncols() {
            panel.values[(2, s)] = 0.005;
        }
        let model =
            build_heterotic(&taxonomy, &panel, 40, HeteroticOptions::default()).unwrap();
        assert_eq!(model.n_etfs(), 5);
        assert!(model
            .excluded
            .iter()
            .any(|(e, r)| e.as_str() == "E3" && *r == Exclusion::ZeroVariance));
    }

    #[test]
    fn unclassified_panel_row_is_excluded() {
        let (taxonomy, panel, ids) = two_block_fixture(40, 23);
        let mut values = panel.values.clone();
        let extra = DMatrix::from_fn(1, 40, |_, s| values[(0, s)] * 0.5 + 0.001);
        values = values.insert_row(6, 0.0);
        for s in 0..40 {
            values[(6, s)] = extra[(0, s)];
        }
        let mut etf_ids: Vec<EtfId> = ids.iter().map(|e| EtfId::new(*e)).collect();
        etf_ids.push(EtfId::new("E7"));
        let panel = ReturnsPanel::new(
            etf_ids,
            panel.dates.clone(),
            values,
            DMatrix::from_element(7, 40, false),
        )
        .unwrap();
        let model =
            build_heterotic(&taxonomy, &panel, 40, HeteroticOptions::default()).unwrap();
        assert_eq!(model.n_etfs(), 6);
        assert!(model
            .excluded
            .iter()
            .any(|(e, r)| e.as_str() == "E7" && *r == Exclusion::NotClassified));
    }

    #[test]
    fn incomplete_panel_is_rejected() {
        let (taxonomy, mut panel, _) = two_block_fixture(40, 29);
        panel.missing[(1, 39)] = true;
        assert!(matches!(
            build_heterotic(&taxonomy, &panel, 40, HeteroticOptions::default()),
            Err(ModelError::PanelIncomplete { .. })
        ));
    }

    #[test]
    fn model_inverse_hits_identity() {
        let (taxonomy, panel, _) = two_block_fixture(60, 31);
        let model =
            build_heterotic(&taxonomy, &panel, 60, HeteroticOptions::default()).unwrap();
        let gamma = model.covariance_matrix();
        let inverse = model.invert();
        let product = &gamma * &inverse.matrix;
        let identity = DMatrix::identity(model.n_etfs(), model.n_etfs());
        let max_dev = (product - identity)
            .iter()
            .cloned()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_dev < 1e-8, "max deviation {max_dev}");
    }
}
