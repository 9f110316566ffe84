//! Generative origin-destination flow models and a spatial fairness audit.
//!
//! The crate generates synthetic OD flows with four models (gravity,
//! radiation, non-linear gravity and deep gravity), scores them against
//! observed flows with the Common Part of Commuters, and audits whether
//! that accuracy is distributed evenly between low- and high-vulnerability
//! areas by comparing per-origin CPC histograms with KL divergence.
//!
//! Module map:
//!
//! * [`geodata`] zones, tessellations, sparse flow matrices and CSV I/O.
//! * [`models`] the four flow generators plus fitting and training.
//! * [`metrics`] CPC, per-origin CPC samples and their mean.
//! * [`fairness`] SVI grouping, histogram estimation, KL scoring, the audit report.
//! * [`synth`] seeded synthetic cities and bias injection.
//! * [`cli`] the `flowfair` command-line surface.

pub mod cli;
pub mod error;
pub mod fairness;
pub mod geodata;
pub mod metrics;
pub mod models;
pub mod synth;
mod util;

pub use error::{Error, Result};
pub use geodata::{FlowMatrix, SviTheme, Tessellation, Zone};
pub use models::ModelKind;
