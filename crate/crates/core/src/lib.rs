//! End-to-end pipeline for drug overdose risk prediction from
//! longitudinal insurance-claims records.
//!
//! Stages: synthetic population generation ([`synth`]) or CSV ingestion
//! ([`claims`]), cohort classification and cutoff alignment ([`cohort`]),
//! prompt serialization ([`serialize`]), count-vector features
//! ([`features`]), tree-ensemble and LLM predictors ([`predict`]), and
//! the evaluation/ablation/cost harness ([`eval`]).

pub mod claims;
pub mod cohort;
pub mod error;
pub mod eval;
pub mod features;
pub mod predict;
pub mod serialize;
pub mod synth;

pub use error::{Error, Result};
