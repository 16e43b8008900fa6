//! Integration tests for the `etfrisk` binary: exit codes, one-line error
//! classes, manifest contents, and config-file precedence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str], config: Option<&Path>) -> Output {
    let mut command = Command::new(env!("CARGO_BIN_EXE_etfrisk"));
    command.args(args);
    match config {
        Some(path) => command.env("RISKMODEL_CONFIG", path),
        None => command.env_remove("RISKMODEL_CONFIG"),
    };
    command.output().expect("spawn etfrisk")
}

fn path(p: &Path) -> String {
    p.to_str().expect("utf8 path").to_string()
}

fn stderr_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Synthesizes a universe and returns its directory.
fn synth_universe(root: &Path) -> PathBuf {
    let universe = root.join("universe");
    let output = run(
        &["synth", "generate", "--out", &path(&universe), "--seed", "7"],
        None,
    );
    assert!(output.status.success(), "synth: {}", stderr_text(&output));
    universe
}

fn organic_taxonomy(root: &Path, universe: &Path) -> PathBuf {
    let out = root.join("taxonomy");
    let output = run(
        &[
            "taxonomy",
            "organic",
            "--universe",
            &path(universe),
            "--out",
            &path(&out),
        ],
        None,
    );
    assert!(output.status.success(), "organic: {}", stderr_text(&output));
    out.join("taxonomy.txt")
}

#[test]
fn pipeline_happy_path_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let universe = synth_universe(dir.path());
    let taxonomy = organic_taxonomy(dir.path(), &universe);
    let model = dir.path().join("model");
    let output = run(
        &[
            "model",
            "build",
            "--universe",
            &path(&universe),
            "--taxonomy",
            &path(&taxonomy),
            "--out",
            &path(&model),
        ],
        None,
    );
    assert!(output.status.success(), "build: {}", stderr_text(&output));
    for name in [
        "loadings.csv",
        "factor_cov.csv",
        "variances.csv",
        "exclusions.csv",
        "manifest.txt",
    ] {
        assert!(model.join(name).is_file(), "missing {name}");
    }
    let manifest = fs::read_to_string(model.join("manifest.txt")).unwrap();
    assert!(manifest.contains("param\tlookback\t252"), "{manifest}");
    assert!(manifest.contains("param\tmethod\theterotic"), "{manifest}");
    assert!(manifest.contains("input\tuniverse\tsha256:"), "{manifest}");
    assert!(manifest.contains("input\ttaxonomy\tsha256:"), "{manifest}");
}

#[test]
fn build_rejects_lookback_smaller_than_top_level() {
    let dir = tempfile::tempdir().unwrap();
    let universe = synth_universe(dir.path());
    let taxonomy = organic_taxonomy(dir.path(), &universe);
    let output = run(
        &[
            "model",
            "build",
            "--universe",
            &path(&universe),
            "--taxonomy",
            &path(&taxonomy),
            "--out",
            &path(&dir.path().join("model")),
            "--lookback",
            "3",
        ],
        None,
    );
    assert_eq!(output.status.code(), Some(1));
    let stderr = stderr_text(&output);
    assert!(stderr.starts_with("error[model]:"), "{stderr}");
    assert!(stderr.contains("top level too large for lookback"), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
}

#[test]
fn augment_manifest_records_vtilde_and_nstar() {
    let dir = tempfile::tempdir().unwrap();
    let universe = synth_universe(dir.path());
    let out = dir.path().join("augmented");
    let output = run(
        &[
            "taxonomy",
            "augment",
            "--universe",
            &path(&universe),
            "--out",
            &path(&out),
            "--vtilde",
            "0.1",
            "--nstar",
            "3",
        ],
        None,
    );
    assert!(output.status.success(), "augment: {}", stderr_text(&output));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("param\tvtilde\t0.1"), "{manifest}");
    assert!(manifest.contains("param\tnstar\t3"), "{manifest}");
    assert!(out.join("taxonomy.txt").is_file());
    assert!(out.join("metadata.txt").is_file());
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let universe = synth_universe(dir.path());
    let config = dir.path().join("riskmodel.conf");
    fs::write(&config, "# acceptance config\nwstar=0.7\n").unwrap();

    let from_config = dir.path().join("tax-config");
    let output = run(
        &[
            "taxonomy",
            "organic",
            "--universe",
            &path(&universe),
            "--out",
            &path(&from_config),
        ],
        Some(&config),
    );
    assert!(output.status.success(), "{}", stderr_text(&output));
    let manifest = fs::read_to_string(from_config.join("manifest.txt")).unwrap();
    assert!(manifest.contains("param\twstar\t0.7"), "{manifest}");

    let from_flag = dir.path().join("tax-flag");
    let output = run(
        &[
            "taxonomy",
            "organic",
            "--universe",
            &path(&universe),
            "--out",
            &path(&from_flag),
            "--wstar",
            "0.6",
        ],
        Some(&config),
    );
    assert!(output.status.success(), "{}", stderr_text(&output));
    let manifest = fs::read_to_string(from_flag.join("manifest.txt")).unwrap();
    assert!(manifest.contains("param\twstar\t0.6"), "{manifest}");
}

#[test]
fn unknown_flag_is_a_one_line_usage_error() {
    let output = run(&["synth", "generate", "--bogus-flag"], None);
    assert_eq!(output.status.code(), Some(2));
    let stderr = stderr_text(&output);
    assert!(stderr.starts_with("error[usage]:"), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("riskmodel.conf");
    fs::write(&config, "wstar=0.7\nturbo=1\n").unwrap();
    let output = run(
        &[
            "synth",
            "generate",
            "--out",
            &path(&dir.path().join("u")),
            "--seed",
            "7",
        ],
        Some(&config),
    );
    assert_eq!(output.status.code(), Some(1));
    let stderr = stderr_text(&output);
    assert!(stderr.starts_with("error[config]:"), "{stderr}");
    assert!(stderr.contains("turbo"), "{stderr}");
}

#[test]
fn missing_universe_is_an_ingest_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(
        &[
            "taxonomy",
            "organic",
            "--universe",
            &path(&dir.path().join("nowhere")),
            "--out",
            &path(&dir.path().join("tax")),
        ],
        None,
    );
    assert_eq!(output.status.code(), Some(1));
    let stderr = stderr_text(&output);
    assert!(stderr.starts_with("error[ingest]:"), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
}

#[test]
fn invert_writes_labeled_inverse() {
    let dir = tempfile::tempdir().unwrap();
    let universe = synth_universe(dir.path());
    let taxonomy = organic_taxonomy(dir.path(), &universe);
    let model = dir.path().join("model");
    let output = run(
        &[
            "model",
            "build",
            "--universe",
            &path(&universe),
            "--taxonomy",
            &path(&taxonomy),
            "--out",
            &path(&model),
        ],
        None,
    );
    assert!(output.status.success(), "{}", stderr_text(&output));
    let inverse_dir = dir.path().join("inverse");
    let output = run(
        &[
            "model",
            "invert",
            "--model",
            &path(&model),
            "--out",
            &path(&inverse_dir),
        ],
        None,
    );
    assert!(output.status.success(), "invert: {}", stderr_text(&output));
    let inverse = fs::read_to_string(inverse_dir.join("inverse.csv")).unwrap();
    let mut lines = inverse.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("id,"), "{header}");
    let n = header.split(',').count() - 1;
    assert_eq!(lines.count(), n, "inverse is not square");
    assert!(inverse_dir.join("manifest.txt").is_file());
}

#[test]
fn style_diagnostic_reports_the_intercept_identity() {
    let dir = tempfile::tempdir().unwrap();
    let universe = synth_universe(dir.path());

    // Style exposures keyed by ETF id, one entry per generated ETF.
    let etfs = fs::read_to_string(universe.join("etfs.csv")).unwrap();
    let mut beta = String::from("etf_id,value\n");
    for (i, line) in etfs.lines().skip(1).enumerate() {
        let id = line.split(',').next().unwrap();
        beta.push_str(&format!("{id},{}\n", 0.5 + 0.01 * i as f64));
    }
    let beta_path = dir.path().join("beta.csv");
    fs::write(&beta_path, beta).unwrap();

    let out = dir.path().join("style");
    let output = run(
        &[
            "diagnose",
            "style",
            "--universe",
            &path(&universe),
            "--beta",
            &path(&beta_path),
            "--out",
            &path(&out),
        ],
        None,
    );
    assert!(output.status.success(), "style: {}", stderr_text(&output));
    let report = fs::read_to_string(out.join("style.txt")).unwrap();
    let field = |name: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{name}\t")))
            .unwrap_or_else(|| panic!("missing {name} in {report}"))
            .parse()
            .expect("numeric field")
    };
    let intercept = field("intercept");
    let mean = field("mean_pairwise_correlation");
    assert!(
        (intercept - mean).abs() <= 1e-10,
        "intercept {intercept} vs mean pairwise correlation {mean}"
    );

    // Direct correlation-matrix mode: the intercept identity holds on a
    // hand-written 3x3 matrix with mean off-diagonal 0.2.
    let psi_path = dir.path().join("psi.csv");
    fs::write(&psi_path, "1.0,0.2,0.1\n0.2,1.0,0.3\n0.1,0.3,1.0\n").unwrap();
    let beta3_path = dir.path().join("beta3.csv");
    fs::write(&beta3_path, "0.5\n-0.2\n0.8\n").unwrap();
    let out3 = dir.path().join("style-psi");
    let output = run(
        &[
            "diagnose",
            "style",
            "--psi",
            &path(&psi_path),
            "--beta",
            &path(&beta3_path),
            "--out",
            &path(&out3),
        ],
        None,
    );
    assert!(output.status.success(), "psi mode: {}", stderr_text(&output));
    let report = fs::read_to_string(out3.join("style.txt")).unwrap();
    let intercept: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("intercept\t"))
        .expect("intercept line")
        .parse()
        .unwrap();
    assert!((intercept - 0.2).abs() <= 1e-10, "intercept {intercept}");
}

#[test]
fn help_exits_zero() {
    let output = run(&["--help"], None);
    assert_eq!(output.status.code(), Some(0));
    assert!(!output.stdout.is_empty());
}
