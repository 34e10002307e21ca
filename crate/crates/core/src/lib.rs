//! Incident-duration analysis toolkit for the Sydney-style road incident schema.
//!
//! The crate ingests incident and zone CSV files (or generates seeded synthetic
//! ones), explores duration distributions with exact 1-Wasserstein distances,
//! trains tree ensembles built from scratch (variance CART, second-order
//! boosting with depth-wise or leaf-wise growth, bagged forests), evaluates
//! regression and threshold-based classification, and explains fitted models
//! via split statistics and path-dependent SHAP values.
//!
//! Everything downstream of a seed is deterministic: same inputs, same
//! configuration, same bytes out.

pub mod boosting;
pub mod cli;
pub mod dataset;
pub mod explain;
pub mod metrics;
pub mod stats;
pub mod synth;
pub mod tree;
