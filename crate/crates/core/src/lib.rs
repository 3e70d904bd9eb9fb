//! Reliable accuracy lower bounds for a classifier on an unlabeled, shifted
//! target domain.
//!
//! Two critic objectives are provided: disagreement discrepancy (Dis²), which
//! maximizes target disagreement minus source disagreement with the studied
//! classifier `ĥ`, and overlap-aware disagreement discrepancy (ODD), which
//! discounts target samples that a domain classifier places in the region
//! shared with the source domain.
//!
//! Module map:
//!
//! - [`nn`]: dense MLP, exact backprop, Adam, text serialization.
//! - [`data`]: 2-D two-Gaussian benchmark generator and CSV ingestion.
//! - [`losses`]: `ℓ_logistic`, `ℓ_dis` and the two critic objectives.
//! - [`overlap`]: domain classifier and soft/hard overlap weights.
//! - [`critic`]: multi-restart critic search.
//! - [`bounds`]: discrepancies, concentration term, bound reports.
//! - [`harness`]: synthetic sweeps, single-file runs, metrics, exports.

pub mod bounds;
pub mod critic;
pub mod data;
mod error;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod overlap;
pub mod seed;

pub use error::{Error, Result};
