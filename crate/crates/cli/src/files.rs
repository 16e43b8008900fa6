//! File formats the CLI reads and writes beyond the core crate's own:
//! exported model pieces (loadings, factor covariance, variances), dense
//! matrices, style-factor vectors, and long-format returns.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{io_ctx, CliError};
use etfrisk::ids::{CategoryId, EtfId};
use etfrisk::model::RiskModel;
use etfrisk::panel::ReturnsPanel;

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    let file =
        fs::File::create(path).map_err(io_ctx(format!("creating {}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn finish(mut out: BufWriter<fs::File>, path: &Path) -> Result<(), CliError> {
    out.flush().map_err(io_ctx(format!("writing {}", path.display())))
}

/// Writes `loadings.csv`, `factor_cov.csv`, `variances.csv`, and
/// `exclusions.csv`; returns the written paths in that order.
///
/// Loadings are the calibrated variance-space loadings `L = diag(sigma) B`
/// and the specific variance column is in variance space, so the model
/// covariance is exactly `L Phi L' + diag(specific_variance)`.
pub fn write_model(dir: &Path, model: &RiskModel) -> Result<Vec<PathBuf>, CliError> {
    let loadings = model.calibrated_loadings();
    let mut written = Vec::new();

    let path = dir.join("loadings.csv");
    let mut out = create(&path)?;
    let err = io_ctx(format!("writing {}", path.display()));
    (|| {
        writeln!(out, "etf_id,factor_id,value")?;
        for (i, etf) in model.etf_ids.iter().enumerate() {
            for (a, factor) in model.factor_ids.iter().enumerate() {
                writeln!(out, "{etf},{factor},{}", loadings[(i, a)])?;
            }
        }
        Ok(())
    })()
    .map_err(err)?;
    finish(out, &path)?;
    written.push(path);

    let path = dir.join("factor_cov.csv");
    let mut out = create(&path)?;
    let err = io_ctx(format!("writing {}", path.display()));
    (|| {
        writeln!(out, "factor_id_a,factor_id_b,value")?;
        for (a, fa) in model.factor_ids.iter().enumerate() {
            for (b, fb) in model.factor_ids.iter().enumerate() {
                writeln!(out, "{fa},{fb},{}", model.factor_cov[(a, b)])?;
            }
        }
        Ok(())
    })()
    .map_err(err)?;
    finish(out, &path)?;
    written.push(path);

    let path = dir.join("variances.csv");
    let mut out = create(&path)?;
    let err = io_ctx(format!("writing {}", path.display()));
    (|| {
        writeln!(out, "etf_id,specific_variance,total_variance")?;
        for (i, etf) in model.etf_ids.iter().enumerate() {
            let specific = model.specific_var[i] * model.total_var[i];
            writeln!(out, "{etf},{specific},{}", model.total_var[i])?;
        }
        Ok(())
    })()
    .map_err(err)?;
    finish(out, &path)?;
    written.push(path);

    let path = dir.join("exclusions.csv");
    let mut out = create(&path)?;
    let err = io_ctx(format!("writing {}", path.display()));
    (|| {
        writeln!(out, "etf_id,reason")?;
        for (etf, reason) in &model.excluded {
            writeln!(out, "{etf},{}", reason.name())?;
        }
        Ok(())
    })()
    .map_err(err)?;
    finish(out, &path)?;
    written.push(path);

    Ok(written)
}

fn read_lines(path: &Path, header: &str) -> Result<Vec<Vec<String>>, CliError> {
    let text =
        fs::read_to_string(path).map_err(io_ctx(format!("reading {}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first == header => {}
        Some(first) => {
            return Err(CliError::Input(format!(
                "{}: expected header `{header}`, found `{first}`",
                path.display()
            )))
        }
        None => return Err(CliError::Input(format!("{}: empty file", path.display()))),
    }
    let n_fields = header.split(',').count();
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_owned).collect();
        if fields.len() != n_fields {
            return Err(CliError::Input(format!(
                "{}:{}: expected {n_fields} fields, found {}",
                path.display(),
                idx + 2,
                fields.len()
            )));
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn parse_f64(path: &Path, field: &str) -> Result<f64, CliError> {
    field.parse().map_err(|_| {
        CliError::Input(format!("{}: `{field}` is not a number", path.display()))
    })
}

/// Rebuilds a model from a directory written by [`write_model`]. The
/// exported pieces determine the covariance and its inverse exactly;
/// excluded ETFs and raw loadings are not round-tripped.
pub fn read_model(dir: &Path) -> Result<RiskModel, CliError> {
    let var_path = dir.join("variances.csv");
    let mut etf_ids = Vec::new();
    let mut specific = Vec::new();
    let mut total = Vec::new();
    for row in read_lines(&var_path, "etf_id,specific_variance,total_variance")? {
        etf_ids.push(EtfId::new(&row[0]));
        specific.push(parse_f64(&var_path, &row[1])?);
        total.push(parse_f64(&var_path, &row[2])?);
    }
    if etf_ids.is_empty() {
        return Err(CliError::Input(format!("{}: no ETFs", var_path.display())));
    }
    let n = etf_ids.len();
    let etf_index: BTreeMap<&EtfId, usize> =
        etf_ids.iter().enumerate().map(|(i, e)| (e, i)).collect();
    if etf_index.len() != n {
        return Err(CliError::Input(format!(
            "{}: duplicate etf_id",
            var_path.display()
        )));
    }

    let cov_path = dir.join("factor_cov.csv");
    let cov_rows = read_lines(&cov_path, "factor_id_a,factor_id_b,value")?;
    let mut factor_ids: Vec<CategoryId> = Vec::new();
    for row in &cov_rows {
        let id = CategoryId::new(&row[0]);
        if !factor_ids.contains(&id) {
            factor_ids.push(id);
        }
    }
    let k = factor_ids.len();
    let factor_index: BTreeMap<&CategoryId, usize> =
        factor_ids.iter().enumerate().map(|(a, f)| (f, a)).collect();
    if cov_rows.len() != k * k {
        return Err(CliError::Input(format!(
            "{}: expected {k}x{k} entries, found {}",
            cov_path.display(),
            cov_rows.len()
        )));
    }
    let mut factor_cov = DMatrix::<f64>::zeros(k, k);
    for row in &cov_rows {
        let a = factor_index[&CategoryId::new(&row[0])];
        let Some(&b) = factor_index.get(&CategoryId::new(&row[1])) else {
            return Err(CliError::Input(format!(
                "{}: unknown factor `{}`",
                cov_path.display(),
                row[1]
            )));
        };
        factor_cov[(a, b)] = parse_f64(&cov_path, &row[2])?;
    }

    let load_path = dir.join("loadings.csv");
    let load_rows = read_lines(&load_path, "etf_id,factor_id,value")?;
    if load_rows.len() != n * k {
        return Err(CliError::Input(format!(
            "{}: expected {} entries, found {}",
            load_path.display(),
            n * k,
            load_rows.len()
        )));
    }
    let mut loadings = DMatrix::<f64>::zeros(n, k);
    for row in &load_rows {
        let Some(&i) = etf_index.get(&EtfId::new(&row[0])) else {
            return Err(CliError::Input(format!(
                "{}: unknown etf `{}`",
                load_path.display(),
                row[0]
            )));
        };
        let Some(&a) = factor_index.get(&CategoryId::new(&row[1])) else {
            return Err(CliError::Input(format!(
                "{}: unknown factor `{}`",
                load_path.display(),
                row[1]
            )));
        };
        loadings[(i, a)] = parse_f64(&load_path, &row[2])?;
    }

    for (i, &t) in total.iter().enumerate() {
        if t.is_nan() || t <= 0.0 {
            return Err(CliError::Input(format!(
                "{}: total variance of {} is not positive",
                var_path.display(),
                etf_ids[i]
            )));
        }
    }
    let sigma: Vec<f64> = total.iter().map(|v| v.sqrt()).collect();
    let beta = DMatrix::from_fn(n, k, |i, a| loadings[(i, a)] / sigma[i]);
    let xi2 = DVector::from_iterator(n, (0..n).map(|i| specific[i] / total[i]));

    Ok(RiskModel {
        etf_ids,
        factor_ids,
        omega: loadings,
        beta,
        factor_cov,
        specific_var: xi2,
        total_var: DVector::from_vec(total),
        gamma: DVector::from_element(n, 1.0),
        excluded: Vec::new(),
    })
}

/// Dense matrix with row/column labels: header `id,<c1>,...`, one labeled
/// row per line.
pub fn write_labeled_matrix(
    path: &Path,
    labels: &[EtfId],
    matrix: &DMatrix<f64>,
) -> Result<(), CliError> {
    let mut out = create(path)?;
    let err = io_ctx(format!("writing {}", path.display()));
    (|| {
        write!(out, "id")?;
        for label in labels {
            write!(out, ",{label}")?;
        }
        writeln!(out)?;
        for (i, label) in labels.iter().enumerate() {
            write!(out, "{label}")?;
            for j in 0..labels.len() {
                write!(out, ",{}", matrix[(i, j)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    })()
    .map_err(err)?;
    finish(out, path)
}

/// Headerless square matrix: comma-separated floats, one row per line.
pub fn read_square_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text =
        fs::read_to_string(path).map_err(io_ctx(format!("reading {}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            row.push(parse_f64(path, field.trim())?);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CliError::Input(format!(
                    "{}:{}: ragged row",
                    path.display(),
                    idx + 1
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows[0].len() != n {
        return Err(CliError::Input(format!(
            "{}: expected a square matrix, found {}x{}",
            path.display(),
            n,
            rows.first().map_or(0, Vec::len)
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Style factor keyed by ETF: CSV with header `etf_id,value`.
pub fn read_beta_by_id(path: &Path) -> Result<BTreeMap<EtfId, f64>, CliError> {
    let mut out = BTreeMap::new();
    for row in read_lines(path, "etf_id,value")? {
        let value = parse_f64(path, &row[1])?;
        if out.insert(EtfId::new(&row[0]), value).is_some() {
            return Err(CliError::Input(format!(
                "{}: duplicate etf_id `{}`",
                path.display(),
                row[0]
            )));
        }
    }
    Ok(out)
}

/// Bare style factor: one float per line, aligned with the matrix rows.
pub fn read_beta_values(path: &Path) -> Result<Vec<f64>, CliError> {
    let text =
        fs::read_to_string(path).map_err(io_ctx(format!("reading {}", path.display())))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_f64(path, line)?);
    }
    Ok(out)
}

/// Long-format returns (`etf_id,date,return`, `NA` for missing), the same
/// schema ingestion reads.
pub fn write_returns_csv(path: &Path, panel: &ReturnsPanel) -> Result<(), CliError> {
    let mut out = create(path)?;
    let err = io_ctx(format!("writing {}", path.display()));
    (|| {
        writeln!(out, "etf_id,date,return")?;
        for (i, etf) in panel.etf_ids.iter().enumerate() {
            for (s, date) in panel.dates.iter().enumerate() {
                if panel.missing[(i, s)] {
                    writeln!(out, "{etf},{date},NA")?;
                } else {
                    writeln!(out, "{etf},{date},{}", panel.values[(i, s)])?;
                }
            }
        }
        Ok(())
    })()
    .map_err(err)?;
    finish(out, path)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_ctx(format!("writing {}", path.display())))
}
