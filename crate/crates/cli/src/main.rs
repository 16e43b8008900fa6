//! Pipeline driver: taxonomy construction, returns preparation, risk model
//! building and inversion, style diagnostics, and synthetic data
//! generation. Every run writes a `manifest.txt` of resolved parameters
//! and input/output content hashes next to its outputs.

mod config;
mod error;
mod files;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use config::{resolve, Config};
use error::{io_ctx, CliError};
use manifest::{universe_hash, Manifest};

use etfrisk::builder::{
    augment_thirdparty, build_organic_taxonomy, level_to_exposures, AttributeSplitSpec,
    AugmentParams, OrganicParams, DEFAULT_N_LOWER, DEFAULT_N_STAR, DEFAULT_N_UPPER,
    DEFAULT_RECLASS_WINDOW, DEFAULT_VTILDE_STAR,
};
use etfrisk::diagnostics::style_factor_diagnostic;
use etfrisk::exposure::{ThresholdMode, THRESHOLD_GUARD};
use etfrisk::ingest::{load_returns, load_universe, IngestConfig, Universe, UniversePaths};
use etfrisk::model::{build_general, build_heterotic, HeteroticOptions, sample_correlation};
use etfrisk::panel::ReturnsPanel;
use etfrisk::returns_prep::{preprocess_returns, ClipRule, DEFAULT_CLIP_THRESHOLD};
use etfrisk::synth::{write_synthetic_universe, SynthCategory, SynthSpec};
use etfrisk::taxonomy::{load_taxonomy, save_taxonomy, Taxonomy};
use etfrisk::types::{AssetClass, EtfAssetClass};
use nalgebra::DVector;

/// Default model estimation window, in trading days.
const DEFAULT_LOOKBACK: usize = 252;

#[derive(Parser)]
#[command(name = "etfrisk", version, about = "ETF factor risk model pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build ETF taxonomies
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Prepare returns panels
    #[command(subcommand)]
    Returns(ReturnsCmd),
    /// Build and invert risk models
    #[command(subcommand)]
    Model(ModelCmd),
    /// Factor structure diagnostics
    #[command(subcommand)]
    Diagnose(DiagnoseCmd),
    /// Synthetic test universes
    #[command(subcommand)]
    Synth(SynthCmd),
}

#[derive(Subcommand)]
enum TaxonomyCmd {
    /// Derive a taxonomy from constituent holdings
    Organic(OrganicArgs),
    /// Augment a third-party single-level classification
    Augment(AugmentArgs),
}

#[derive(Subcommand)]
enum ReturnsCmd {
    /// Clip outliers, fill gaps, enforce lookback completeness
    Prep(PrepArgs),
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Build a factor risk model from a taxonomy and returns
    Build(BuildArgs),
    /// Invert an exported model via the low-rank identity
    Invert(InvertArgs),
}

#[derive(Subcommand)]
enum DiagnoseCmd {
    /// Regress pairwise correlations on a style factor
    Style(StyleArgs),
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Generate a seeded universe with planted factor structure
    Generate(GenerateArgs),
}

#[derive(Args)]
struct OrganicArgs {
    /// Directory with etfs.csv, securities.csv, holdings.csv, returns.csv
    #[arg(long)]
    universe: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Membership threshold W*
    #[arg(long)]
    wstar: Option<f64>,
    /// Category size that triggers a finer split
    #[arg(long)]
    nupper: Option<usize>,
    /// Minimum viable category size
    #[arg(long)]
    nlower: Option<usize>,
    /// Keep fractional sector memberships instead of binary assignment
    #[arg(long)]
    weighted: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    universe: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// ADDV share threshold for splitting mixed categories
    #[arg(long)]
    vtilde: Option<f64>,
    /// Minimum category size before reclassification
    #[arg(long)]
    nstar: Option<usize>,
    /// Correlation window for reclassification, in dates
    #[arg(long)]
    window: Option<usize>,
    /// Also split categories of one class by this ETF attribute
    #[arg(long, requires = "split_class")]
    split_attribute: Option<String>,
    /// Asset class whose categories the attribute split applies to
    #[arg(long, requires = "split_attribute")]
    split_class: Option<String>,
    /// Minimum attribute-split group size
    #[arg(long)]
    mstar: Option<usize>,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    universe: PathBuf,
    /// Taxonomy whose level-1 categories drive the gap fill
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Absolute-return veto threshold R*
    #[arg(long)]
    rstar: Option<f64>,
    /// Completeness window, in dates
    #[arg(long)]
    lookback: Option<usize>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    universe: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    /// Cleaned returns CSV; defaults to the universe returns
    #[arg(long)]
    returns: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Estimation window, in dates
    #[arg(long)]
    lookback: Option<usize>,
    /// Nested principal-component construction (default)
    #[arg(long, conflicts_with = "general")]
    heterotic: bool,
    /// General construction: exposure-matrix loadings
    #[arg(long)]
    general: bool,
}

#[derive(Args)]
struct InvertArgs {
    /// Directory with loadings.csv, factor_cov.csv, variances.csv
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StyleArgs {
    /// Universe directory; the correlation matrix is estimated from returns
    #[arg(long, required_unless_present = "psi", conflicts_with = "psi")]
    universe: Option<PathBuf>,
    /// Correlation matrix CSV (headerless, square) to diagnose directly
    #[arg(long)]
    psi: Option<PathBuf>,
    /// Style factor: `etf_id,value` CSV with --universe, bare floats with --psi
    #[arg(long)]
    beta: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Estimation window with --universe, in dates
    #[arg(long)]
    lookback: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Trading dates to generate
    #[arg(long)]
    dates: Option<usize>,
    /// Category spec `name:class:n_etfs:vol`, repeatable
    #[arg(long = "category")]
    categories: Vec<String>,
    /// Volatility of the shared per-class factor
    #[arg(long)]
    class_vol: Option<f64>,
    /// Idiosyncratic volatility; 0 plants exactly low-rank returns
    #[arg(long)]
    idio_vol: Option<f64>,
    /// Fraction of observations masked as missing
    #[arg(long)]
    missing_rate: Option<f64>,
    /// Securities minted per category
    #[arg(long)]
    securities: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
        Err(e) => {
            // --help and --version print to stdout and exit cleanly
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let config = Config::from_env()?;
    match command {
        Command::Taxonomy(TaxonomyCmd::Organic(args)) => taxonomy_organic(args, &config),
        Command::Taxonomy(TaxonomyCmd::Augment(args)) => taxonomy_augment(args, &config),
        Command::Returns(ReturnsCmd::Prep(args)) => returns_prep(args, &config),
        Command::Model(ModelCmd::Build(args)) => model_build(args, &config),
        Command::Model(ModelCmd::Invert(args)) => model_invert(args),
        Command::Diagnose(DiagnoseCmd::Style(args)) => diagnose_style(args, &config),
        Command::Synth(SynthCmd::Generate(args)) => synth_generate(args, &config),
    }
}

fn load_universe_dir(dir: &Path) -> Result<(Universe, UniversePaths), CliError> {
    let paths = UniversePaths::in_dir(dir);
    let (universe, report) = load_universe(&paths, &IngestConfig::default())?;
    if !report.etfs_without_holdings.is_empty() || !report.etfs_without_returns.is_empty() {
        eprintln!(
            "note: {} ETFs without holdings, {} without returns",
            report.etfs_without_holdings.len(),
            report.etfs_without_returns.len()
        );
    }
    Ok((universe, paths))
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_ctx(format!("creating {}", dir.display())))
}

fn taxonomy_organic(args: OrganicArgs, config: &Config) -> Result<(), CliError> {
    let (universe, paths) = load_universe_dir(&args.universe)?;
    let params = OrganicParams {
        wstar: resolve(args.wstar, config.f64("wstar")?, 0.5 + THRESHOLD_GUARD),
        n_upper: resolve(args.nupper, config.usize("nupper")?, DEFAULT_N_UPPER),
        n_lower: resolve(args.nlower, config.usize("nlower")?, DEFAULT_N_LOWER),
        mode: if args.weighted {
            ThresholdMode::Weighted
        } else {
            ThresholdMode::Binary
        },
        ..OrganicParams::default()
    };
    let result = build_organic_taxonomy(&universe, &params)?;

    ensure_out_dir(&args.out)?;
    let taxonomy_path = args.out.join("taxonomy.txt");
    save_taxonomy(&result.taxonomy, &taxonomy_path)?;
    let metadata_path = args.out.join("metadata.txt");
    files::write_text(&metadata_path, &(result.metadata.join("\n") + "\n"))?;

    let mut manifest = Manifest::new("taxonomy organic");
    manifest.param("wstar", params.wstar);
    manifest.param("nupper", params.n_upper);
    manifest.param("nlower", params.n_lower);
    manifest.param(
        "mode",
        if args.weighted { "weighted" } else { "binary" },
    );
    manifest.input_hash("universe", universe_hash(&paths)?);
    manifest.output_file(&taxonomy_path)?;
    manifest.output_file(&metadata_path)?;
    manifest.write(&args.out)?;

    println!(
        "taxonomy: {} level-1 categories over {} ETFs",
        result.taxonomy.level(0).categories.len(),
        result.taxonomy.etf_ids().len()
    );
    Ok(())
}

fn taxonomy_augment(args: AugmentArgs, config: &Config) -> Result<(), CliError> {
    let (universe, paths) = load_universe_dir(&args.universe)?;
    let window = resolve(
        args.window,
        config.usize("window")?,
        DEFAULT_RECLASS_WINDOW.min(universe.returns.n_dates()),
    );
    let m_star = args.mstar.or(config.usize("mstar")?);
    let attribute_split = match &args.split_attribute {
        Some(attribute) => {
            let class_name = args.split_class.as_deref().expect("clap enforces the pair");
            let asset_class = EtfAssetClass::from_str(class_name)
                .map_err(|e| CliError::Input(format!("--split-class: {e}")))?;
            Some(AttributeSplitSpec {
                attribute: attribute.clone(),
                asset_class,
                m_star,
            })
        }
        None => None,
    };
    let params = AugmentParams {
        vtilde_star: resolve(args.vtilde, config.f64("vtilde")?, DEFAULT_VTILDE_STAR),
        n_star: resolve(args.nstar, config.usize("nstar")?, DEFAULT_N_STAR),
        window: Some(window),
        attribute_split,
    };
    let result = augment_thirdparty(&universe.etfs, &universe.returns, &params)?;

    ensure_out_dir(&args.out)?;
    let taxonomy_path = args.out.join("taxonomy.txt");
    save_taxonomy(&result.taxonomy, &taxonomy_path)?;
    let metadata_path = args.out.join("metadata.txt");
    files::write_text(&metadata_path, &result.metadata_text())?;

    let mut manifest = Manifest::new("taxonomy augment");
    manifest.param("vtilde", params.vtilde_star);
    manifest.param("nstar", params.n_star);
    manifest.param("window", window);
    if let Some(spec) = &params.attribute_split {
        manifest.param("split_attribute", &spec.attribute);
        manifest.param("split_class", spec.asset_class.name());
        if let Some(m) = spec.m_star {
            manifest.param("mstar", m);
        }
    }
    manifest.input_hash("universe", universe_hash(&paths)?);
    manifest.output_file(&taxonomy_path)?;
    manifest.output_file(&metadata_path)?;
    manifest.write(&args.out)?;

    println!(
        "taxonomy: {} categories kept or formed over {} ETFs",
        result.taxonomy.level(0).categories.len(),
        result.taxonomy.etf_ids().len()
    );
    Ok(())
}

fn returns_prep(args: PrepArgs, config: &Config) -> Result<(), CliError> {
    let (universe, paths) = load_universe_dir(&args.universe)?;
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let rstar = resolve(args.rstar, config.f64("rstar")?, DEFAULT_CLIP_THRESHOLD);
    let lookback = resolve(args.lookback, config.usize("lookback")?, DEFAULT_LOOKBACK);
    let clean = preprocess_returns(
        &universe.returns,
        taxonomy.level(0),
        &ClipRule::uniform(rstar),
        lookback,
    )?;

    ensure_out_dir(&args.out)?;
    let returns_path = args.out.join("returns.csv");
    files::write_returns_csv(&returns_path, &clean.panel)?;
    let log_path = args.out.join("fill_log.csv");
    files::write_text(&log_path, &clean.fill_log_csv())?;

    let mut manifest = Manifest::new("returns prep");
    manifest.param("rstar", rstar);
    manifest.param("lookback", lookback);
    manifest.input_hash("universe", universe_hash(&paths)?);
    manifest.input_file("taxonomy", &args.taxonomy)?;
    manifest.output_file(&returns_path)?;
    manifest.output_file(&log_path)?;
    manifest.write(&args.out)?;

    println!(
        "prep: kept {} of {} ETFs, {} fill-log entries",
        clean.panel.n_etfs(),
        universe.returns.n_etfs(),
        clean.fill_log.len()
    );
    Ok(())
}

fn model_build(args: BuildArgs, config: &Config) -> Result<(), CliError> {
    let (universe, paths) = load_universe_dir(&args.universe)?;
    let taxonomy: Taxonomy = load_taxonomy(&args.taxonomy)?;
    let panel = match &args.returns {
        Some(path) => load_returns(path)?,
        None => universe.returns.clone(),
    };
    let lookback = resolve(args.lookback, config.usize("lookback")?, DEFAULT_LOOKBACK);
    let method = if args.general { "general" } else { "heterotic" };
    let model = if args.general {
        let exposures = level_to_exposures(taxonomy.level(0))?;
        build_general(
            &exposures,
            &panel,
            lookback,
            taxonomy.level(0).parent_map.as_ref(),
        )?
    } else {
        build_heterotic(&taxonomy, &panel, lookback, HeteroticOptions::default())?
    };

    ensure_out_dir(&args.out)?;
    let written = files::write_model(&args.out, &model)?;

    let mut manifest = Manifest::new("model build");
    manifest.param("lookback", lookback);
    manifest.param("method", method);
    manifest.input_hash("universe", universe_hash(&paths)?);
    manifest.input_file("taxonomy", &args.taxonomy)?;
    if let Some(path) = &args.returns {
        manifest.input_file("returns", path)?;
    }
    for path in &written {
        manifest.output_file(path)?;
    }
    manifest.write(&args.out)?;

    println!(
        "model: {} ETFs on {} factors ({} excluded)",
        model.n_etfs(),
        model.n_factors(),
        model.excluded.len()
    );
    Ok(())
}

fn model_invert(args: InvertArgs) -> Result<(), CliError> {
    let model = files::read_model(&args.model)?;
    let inverse = model.invert();
    if inverse.nearly_degenerate {
        eprintln!(
            "warning: model nearly degenerate: {} of {} specific variances at the floor",
            inverse.floored_specific,
            model.n_etfs()
        );
    }

    ensure_out_dir(&args.out)?;
    let inverse_path = args.out.join("inverse.csv");
    files::write_labeled_matrix(&inverse_path, &model.etf_ids, &inverse.matrix)?;

    let mut manifest = Manifest::new("model invert");
    for name in ["loadings.csv", "factor_cov.csv", "variances.csv"] {
        manifest.input_file(name, &args.model.join(name))?;
    }
    manifest.output_file(&inverse_path)?;
    manifest.write(&args.out)?;

    println!("inverse: {0} x {0} written", model.n_etfs());
    Ok(())
}

fn diagnose_style(args: StyleArgs, config: &Config) -> Result<(), CliError> {
    let mut manifest = Manifest::new("diagnose style");
    let (psi, beta) = match (&args.universe, &args.psi) {
        (Some(dir), None) => {
            let (universe, paths) = load_universe_dir(dir)?;
            let available = universe.returns.n_dates();
            let lookback = resolve(
                args.lookback,
                config.usize("lookback")?,
                DEFAULT_LOOKBACK.min(available),
            );
            if lookback > available {
                return Err(CliError::Input(format!(
                    "lookback {lookback} exceeds panel length {available}"
                )));
            }
            let tail = universe.returns.tail(lookback);
            check_complete(&tail)?;
            let by_id = files::read_beta_by_id(&args.beta)?;
            let beta: Vec<f64> = tail
                .etf_ids
                .iter()
                .map(|etf| {
                    by_id.get(etf).copied().ok_or_else(|| {
                        CliError::Input(format!("style factor missing for {etf}"))
                    })
                })
                .collect::<Result<_, _>>()?;
            manifest.param("lookback", lookback);
            manifest.input_hash("universe", universe_hash(&paths)?);
            manifest.input_file("beta", &args.beta)?;
            (sample_correlation(&tail.values), beta)
        }
        (None, Some(path)) => {
            let psi = files::read_square_matrix(path)?;
            let beta = files::read_beta_values(&args.beta)?;
            if beta.len() != psi.nrows() {
                return Err(CliError::Input(format!(
                    "style factor has {} entries for a {1}x{1} matrix",
                    beta.len(),
                    psi.nrows()
                )));
            }
            manifest.input_file("psi", path)?;
            manifest.input_file("beta", &args.beta)?;
            (psi, beta)
        }
        _ => unreachable!("clap enforces exactly one of --universe/--psi"),
    };

    let result = style_factor_diagnostic(&psi, &DVector::from_vec(beta))?;
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
    let report = format!(
        "style-diagnostic\t1\nn_pairs\t{}\nmean_pairwise_correlation\t{}\nintercept\t{}\n\
         coef_sum\t{}\ncoef_product\t{}\nr_squared\t{}\ndropped\t{}\n",
        result.n_pairs,
        result.mean_pairwise_correlation,
        result.intercept,
        fmt(result.coef_sum),
        fmt(result.coef_product),
        result.r_squared,
        if result.dropped.is_empty() {
            "none".to_owned()
        } else {
            result.dropped.join(",")
        },
    );

    ensure_out_dir(&args.out)?;
    let report_path = args.out.join("style.txt");
    files::write_text(&report_path, &report)?;
    manifest.output_file(&report_path)?;
    manifest.write(&args.out)?;

    print!("{report}");
    Ok(())
}

/// The correlation window must be fully observed; gaps belong to prep.
fn check_complete(panel: &ReturnsPanel) -> Result<(), CliError> {
    for i in 0..panel.n_etfs() {
        for s in 0..panel.n_dates() {
            if panel.missing[(i, s)] {
                return Err(CliError::Input(format!(
                    "returns for {} are missing at {}; run returns prep first",
                    panel.etf_ids[i], panel.dates[s]
                )));
            }
        }
    }
    Ok(())
}

fn parse_category(raw: &str) -> Result<SynthCategory, CliError> {
    let parts: Vec<&str> = raw.split(':').collect();
    let [name, class, n_etfs, vol] = parts.as_slice() else {
        return Err(CliError::Input(format!(
            "--category `{raw}`: expected name:class:n_etfs:vol"
        )));
    };
    let asset_class = AssetClass::from_str(class)
        .map_err(|e| CliError::Input(format!("--category `{raw}`: {e}")))?;
    let n_etfs = n_etfs
        .parse()
        .map_err(|_| CliError::Input(format!("--category `{raw}`: bad count `{n_etfs}`")))?;
    let category_vol = vol
        .parse()
        .map_err(|_| CliError::Input(format!("--category `{raw}`: bad volatility `{vol}`")))?;
    Ok(SynthCategory {
        name: name.to_string(),
        asset_class,
        n_etfs,
        category_vol,
    })
}

fn default_categories() -> Vec<SynthCategory> {
    vec![
        SynthCategory {
            name: "Tech".to_owned(),
            asset_class: AssetClass::Equity,
            n_etfs: 12,
            category_vol: 0.008,
        },
        SynthCategory {
            name: "Health".to_owned(),
            asset_class: AssetClass::Equity,
            n_etfs: 10,
            category_vol: 0.007,
        },
        SynthCategory {
            name: "Gov".to_owned(),
            asset_class: AssetClass::Bond,
            n_etfs: 8,
            category_vol: 0.004,
        },
    ]
}

fn synth_generate(args: GenerateArgs, config: &Config) -> Result<(), CliError> {
    let defaults = SynthSpec::default();
    let categories = if args.categories.is_empty() {
        default_categories()
    } else {
        args.categories
            .iter()
            .map(|raw| parse_category(raw))
            .collect::<Result<_, _>>()?
    };
    let spec = SynthSpec {
        categories,
        class_vol: args.class_vol.unwrap_or(0.005),
        idio_vol: args.idio_vol.unwrap_or(0.004),
        n_dates: args.dates.unwrap_or(defaults.n_dates),
        missing_rate: args.missing_rate.unwrap_or(0.0),
        securities_per_category: args
            .securities
            .unwrap_or(defaults.securities_per_category),
        seed: resolve(args.seed, config.u64("seed")?, defaults.seed),
    };

    ensure_out_dir(&args.out)?;
    let data = write_synthetic_universe(&spec, &args.out)?;

    let mut manifest = Manifest::new("synth generate");
    manifest.param("seed", spec.seed);
    manifest.param("dates", spec.n_dates);
    manifest.param("class_vol", spec.class_vol);
    manifest.param("idio_vol", spec.idio_vol);
    manifest.param("missing_rate", spec.missing_rate);
    manifest.param("securities", spec.securities_per_category);
    for (idx, cat) in spec.categories.iter().enumerate() {
        manifest.param(
            &format!("category.{idx}"),
            format!(
                "{}:{}:{}:{}",
                cat.name,
                cat.asset_class.name(),
                cat.n_etfs,
                cat.category_vol
            ),
        );
    }
    for name in [
        "etfs.csv",
        "securities.csv",
        "holdings.csv",
        "returns.csv",
        "taxonomy.txt",
    ] {
        manifest.output_file(&args.out.join(name))?;
    }
    manifest.write(&args.out)?;

    println!(
        "synth: {} ETFs, {} securities, {} dates",
        data.universe.etfs.len(),
        data.universe.securities.len(),
        data.universe.returns.n_dates()
    );
    Ok(())
}
