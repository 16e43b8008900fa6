//! Risk model construction for ETF universes.
//!
//! The crate covers the full pipeline from raw CSV inputs to an invertible
//! factor risk model: ingestion and validation, look-through exposure
//! aggregation over constituent holdings, taxonomy construction (organic,
//! from constituents, or by augmenting a third-party classification),
//! returns preprocessing, nested principal-component model building, and
//! regression diagnostics for factor structure.

pub mod attributes;
pub mod builder;
pub mod diagnostics;
pub mod exposure;
pub mod holdings;
pub mod ids;
pub mod ingest;
pub mod model;
pub mod panel;
pub mod returns_prep;
pub mod synth;
pub mod taxonomy;
pub mod types;

pub use ids::{CategoryId, EtfId, SecurityId};
