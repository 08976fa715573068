//! Screening toolkit: metric-learned feature embeddings, Local Outlier Factor
//! novelty scoring against sampled normal reference groups, and ROC / AUC /
//! FPR@TPR=1 evaluation under fourfold cross-validation scenarios.
//!
//! The pipeline is split into stages that can be driven individually or
//! end-to-end through [`runner::run`]:
//!
//! 1. [`dataset`]: manifests, per-class quartering, scenario rounds, reference sampling.
//! 2. [`augment`]: flip / rotate expansion of image sets.
//! 3. [`head`]: L2-constrained softmax embedding head trained with Adam.
//! 4. [`lof`]: reference groups and LOF scores, single and dual group rules.
//! 5. [`eval`]: confusion rates, ROC, AUC, FPR@TPR=1, per-disease tables.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod head;
pub mod lof;
pub mod runner;
pub mod scenario;
pub mod synthetic;
mod tsv;

pub use error::{Error, Result};
pub use features::{FeatureFile, FeatureRecord, FeatureSet, TrueLabel};

/// Toolkit version embedded in run provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
