//! Synthetic EHR laboratory for decomposing the gap between retrospective
//! and prospective performance of a clinical risk model into temporal and
//! infrastructure components.

pub mod cli_io;
pub mod ehr_sim;
pub mod error;
pub mod featurize;
pub mod gap_analysis;
pub mod ids;
pub mod metrics;
pub mod risk_model;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
