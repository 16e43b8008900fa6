//! CLI error type: every failure maps to a stable one-word class that
//! prefixes the single error line printed on exit.

use etfrisk::builder::BuilderError;
use etfrisk::diagnostics::DiagnosticError;
use etfrisk::exposure::ExposureError;
use etfrisk::ingest::IngestError;
use etfrisk::model::ModelError;
use etfrisk::returns_prep::PrepError;
use etfrisk::synth::SynthError;
use etfrisk::taxonomy::TaxonomyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Builder(#[from] BuilderError),
    #[error(transparent)]
    Exposure(#[from] ExposureError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diagnostic(#[from] DiagnosticError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Io { .. } => "io",
            CliError::Ingest(_) => "ingest",
            CliError::Taxonomy(_) => "taxonomy",
            CliError::Builder(_) => "builder",
            CliError::Exposure(_) => "exposure",
            CliError::Prep(_) => "prep",
            CliError::Model(_) => "model",
            CliError::Diagnostic(_) => "diagnostic",
            CliError::Synth(_) => "synth",
        }
    }
}

/// Adapter for `map_err` on filesystem calls.
pub fn io_ctx(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}
