//! Run manifests: resolved parameters plus content hashes of every input
//! and output file. No paths or timestamps enter the manifest, so two runs
//! with identical inputs and flags write identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{io_ctx, CliError};
use etfrisk::ingest::UniversePaths;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn sha256_file(path: &Path) -> Result<[u8; 32], CliError> {
    let bytes = fs::read(path).map_err(io_ctx(format!("reading {}", path.display())))?;
    Ok(Sha256::digest(&bytes).into())
}

fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_ctx(format!("reading {}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the four universe CSVs: a digest over their digests, in the
/// fixed order etfs, securities, holdings, returns.
pub fn universe_hash(paths: &UniversePaths) -> Result<String, CliError> {
    let mut outer = Sha256::new();
    for path in [&paths.etfs, &paths.securities, &paths.holdings, &paths.returns] {
        outer.update(sha256_file(path)?);
    }
    Ok(outer
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[derive(Debug)]
pub struct Manifest {
    command: String,
    params: BTreeMap<String, String>,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            params: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.params.insert(key.to_owned(), value.to_string());
    }

    pub fn input_hash(&mut self, role: &str, hash: String) {
        self.inputs.push((role.to_owned(), hash));
    }

    pub fn input_file(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.push((role.to_owned(), file_hash(path)?));
        Ok(())
    }

    /// Records an output by file name; call after the file is written.
    pub fn output_file(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.push((name, file_hash(path)?));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::from("etfrisk-manifest\t1\n");
        out.push_str(&format!("command\t{}\n", self.command));
        for (key, value) in &self.params {
            out.push_str(&format!("param\t{key}\t{value}\n"));
        }
        for (role, hash) in &self.inputs {
            out.push_str(&format!("input\t{role}\tsha256:{hash}\n"));
        }
        for (name, hash) in &self.outputs {
            out.push_str(&format!("output\t{name}\tsha256:{hash}\n"));
        }
        out
    }

    /// Writes `manifest.txt` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.txt");
        fs::write(&path, self.render())
            .map_err(io_ctx(format!("writing {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_sorted_params_and_ordered_files() {
        let mut manifest = Manifest::new("model build");
        manifest.param("lookback", 252);
        manifest.param("method", "heterotic");
        manifest.input_hash("universe", "ab".repeat(32));
        let text = manifest.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "etfrisk-manifest\t1");
        assert_eq!(lines[1], "command\tmodel build");
        assert_eq!(lines[2], "param\tlookback\t252");
        assert_eq!(lines[3], "param\tmethod\theterotic");
        assert!(lines[4].starts_with("input\tuniverse\tsha256:"));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
