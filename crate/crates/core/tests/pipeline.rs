//! End-to-end flows over seeded synthetic universes: classification
//! recovery, covariance reproduction on planted low-rank returns, and the
//! full file-to-inverse path through the public API.

use std::collections::BTreeMap;

use etfrisk::builder::{build_organic_taxonomy, OrganicParams};
use etfrisk::ids::{CategoryId, EtfId};
use etfrisk::ingest::{load_universe, IngestConfig, UniversePaths};
use etfrisk::model::{build_heterotic, HeteroticOptions};
use etfrisk::returns_prep::{preprocess_returns, ClipRule};
use etfrisk::synth::{generate_synthetic_universe, write_synthetic_universe, SynthCategory, SynthSpec};
use etfrisk::taxonomy::LevelAssignment;
use etfrisk::types::AssetClass;
use nalgebra::DMatrix;

/// Two 20-ETF blocks in one asset class with planted correlations 0.8
/// within a block and 0.1 across blocks: variance splits as
/// class 0.1, category 0.7, idiosyncratic 0.2.
fn two_block_spec() -> SynthSpec {
    let scale = 0.01;
    SynthSpec {
        categories: vec![
            SynthCategory {
                name: "BlockA".to_owned(),
                asset_class: AssetClass::Equity,
                n_etfs: 20,
                category_vol: scale * 0.7f64.sqrt(),
            },
            SynthCategory {
                name: "BlockB".to_owned(),
                asset_class: AssetClass::Equity,
                n_etfs: 20,
                category_vol: scale * 0.7f64.sqrt(),
            },
        ],
        class_vol: scale * 0.1f64.sqrt(),
        idio_vol: scale * 0.2f64.sqrt(),
        n_dates: 500,
        seed: 42,
        ..SynthSpec::default()
    }
}

fn binary_assignments(assignment: &LevelAssignment) -> &BTreeMap<EtfId, CategoryId> {
    match assignment {
        LevelAssignment::Binary(map) => map,
        LevelAssignment::Weighted(_) => panic!("expected a binary level"),
    }
}

#[test]
fn organic_taxonomy_recovers_planted_two_block_membership() {
    let data = generate_synthetic_universe(&two_block_spec()).unwrap();
    let planted = binary_assignments(&data.taxonomy.level(0).assignment).clone();

    // sanity: the panel realizes the planted correlation structure
    let panel = &data.universe.returns;
    let corr = etfrisk::model::sample_correlation(&panel.values);
    let mut within = Vec::new();
    let mut cross = Vec::new();
    for i in 0..40 {
        for j in 0..i {
            if (i < 20) == (j < 20) {
                within.push(corr[(i, j)]);
            } else {
                cross.push(corr[(i, j)]);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        (mean(&within) - 0.8).abs() < 0.05,
        "mean within-block correlation {}",
        mean(&within)
    );
    assert!(
        (mean(&cross) - 0.1).abs() < 0.05,
        "mean cross-block correlation {}",
        mean(&cross)
    );

    let organic = build_organic_taxonomy(&data.universe, &OrganicParams::default()).unwrap();
    let recovered = binary_assignments(&organic.taxonomy.level(0).assignment);
    assert_eq!(recovered.len(), 40);

    // majority-map each planted label onto a recovered label, then score
    let mut votes: BTreeMap<(CategoryId, CategoryId), usize> = BTreeMap::new();
    for (etf, cat) in &planted {
        let found = recovered.get(etf).expect("every ETF is classified");
        *votes.entry((cat.clone(), found.clone())).or_insert(0) += 1;
    }
    let mut label_map: BTreeMap<CategoryId, (CategoryId, usize)> = BTreeMap::new();
    for ((truth, found), n) in votes {
        let entry = label_map.entry(truth).or_insert((found.clone(), 0));
        if n > entry.1 {
            *entry = (found, n);
        }
    }
    let hits = planted
        .iter()
        .filter(|(etf, cat)| recovered.get(*etf) == Some(&label_map[*cat].0))
        .count();
    let rate = hits as f64 / planted.len() as f64;
    assert!(rate >= 0.95, "recovered {hits}/40 = {rate}");
}

#[test]
fn zero_noise_low_rank_panel_reproduces_sample_covariance() {
    // two categories under distinct top-level classes, no idiosyncratic
    // noise: the nested model has enough factors to span the panel
    let spec = SynthSpec {
        categories: vec![
            SynthCategory {
                name: "Stocks".to_owned(),
                asset_class: AssetClass::Equity,
                n_etfs: 8,
                category_vol: 0.012,
            },
            SynthCategory {
                name: "Bonds".to_owned(),
                asset_class: AssetClass::Bond,
                n_etfs: 8,
                category_vol: 0.006,
            },
        ],
        class_vol: 0.009,
        idio_vol: 0.0,
        n_dates: 60,
        seed: 5,
        ..SynthSpec::default()
    };
    let data = generate_synthetic_universe(&spec).unwrap();
    let panel = &data.universe.returns;
    let model = build_heterotic(
        &data.taxonomy,
        panel,
        panel.n_dates(),
        HeteroticOptions::default(),
    )
    .unwrap();
    assert!(model.excluded.is_empty());

    // oracle: sample covariance computed directly from the raw panel
    let n = panel.n_etfs();
    let t = panel.n_dates();
    let means: Vec<f64> = (0..n)
        .map(|i| (0..t).map(|s| panel.values[(i, s)]).sum::<f64>() / t as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for s in 0..t {
                acc += (panel.values[(i, s)] - means[i]) * (panel.values[(j, s)] - means[j]);
            }
            cov[(i, j)] = acc / (t - 1) as f64;
        }
    }

    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let modeled = model.covariance_matrix();
    let mut worst = 0.0f64;
    for i in 0..n {
        let row = model.etf_index(&panel.etf_ids[i]).unwrap();
        for j in 0..n {
            let col = model.etf_index(&panel.etf_ids[j]).unwrap();
            worst = worst.max((modeled[(row, col)] - cov[(i, j)]).abs());
        }
    }
    assert!(
        worst / scale < 1e-6,
        "max |model - sample| / scale = {}",
        worst / scale
    );
}

#[test]
fn synthetic_files_round_trip_through_the_full_pipeline() {
    let spec = SynthSpec {
        categories: vec![
            SynthCategory {
                name: "Tech".to_owned(),
                asset_class: AssetClass::Equity,
                n_etfs: 12,
                category_vol: 0.008,
            },
            SynthCategory {
                name: "Utilities".to_owned(),
                asset_class: AssetClass::Equity,
                n_etfs: 10,
                category_vol: 0.006,
            },
            SynthCategory {
                name: "Treasuries".to_owned(),
                asset_class: AssetClass::Bond,
                n_etfs: 8,
                category_vol: 0.004,
            },
        ],
        class_vol: 0.005,
        idio_vol: 0.004,
        n_dates: 120,
        missing_rate: 0.02,
        seed: 19,
        ..SynthSpec::default()
    };
    let dir = tempfile::TempDir::new().unwrap();
    write_synthetic_universe(&spec, dir.path()).unwrap();

    let (universe, report) =
        load_universe(&UniversePaths::in_dir(dir.path()), &IngestConfig::default()).unwrap();
    assert_eq!(report.n_etfs, 30);
    assert!(report.returns_missing_fraction > 0.0);

    let organic = build_organic_taxonomy(&universe, &OrganicParams::default()).unwrap();
    assert_eq!(organic.taxonomy.n_levels(), 2);

    let clean = preprocess_returns(
        &universe.returns,
        organic.taxonomy.level(0),
        &ClipRule::uniform(0.15),
        100,
    )
    .unwrap();
    assert!(clean.dropped.is_empty(), "dropped {:?}", clean.dropped);
    assert_eq!(clean.panel.missing_fraction(), 0.0);

    let model = build_heterotic(
        &organic.taxonomy,
        &clean.panel,
        100,
        HeteroticOptions::default(),
    )
    .unwrap();
    assert!(model.excluded.is_empty());
    assert_eq!(model.n_etfs(), 30);

    // calibration: model variance reproduces the sample variance per ETF
    let covariance = model.covariance_matrix();
    for (i, &sigma2) in model.total_var.iter().enumerate() {
        let rel = (covariance[(i, i)] / sigma2 - 1.0).abs();
        assert!(rel < 1e-8, "diagonal calibration off by {rel}");
    }

    // the inverse really inverts
    let inverse = model.invert();
    assert!(!inverse.nearly_degenerate);
    let identity = DMatrix::<f64>::identity(model.n_etfs(), model.n_etfs());
    let err = (&covariance * &inverse.matrix - identity)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-8, "inverse residual {err}");
}

#[test]
fn augmented_thirdparty_labels_feed_the_model() {
    use etfrisk::builder::{augment_thirdparty, AugmentParams};

    let data = generate_synthetic_universe(&two_block_spec()).unwrap();
    let result = augment_thirdparty(
        &data.universe.etfs,
        &data.universe.returns,
        &AugmentParams::default(),
    )
    .unwrap();
    // pure labels already agree with their asset class: augmentation only
    // adds the class level on top
    let planted = binary_assignments(&data.taxonomy.level(0).assignment);
    let augmented = binary_assignments(&result.taxonomy.level(0).assignment);
    assert_eq!(planted, augmented);

    let model = build_heterotic(
        &result.taxonomy,
        &data.universe.returns,
        250,
        HeteroticOptions::default(),
    )
    .unwrap();
    assert!(model.excluded.is_empty());
    assert_eq!(model.n_factors(), 2);
}
