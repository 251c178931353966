//! Corpus engineering for entity-adaptive masked-LM pre-training on
//! dialogue state tracking data, plus the matching evaluation harness.
//!
//! The pipeline ingests TRADE-preprocessed MultiWOZ splits, builds word and
//! phrase entity sets from an ontology, offline tagger span files, and an
//! in-repo gazetteer, and emits masked-LM examples where entity tokens are
//! masked at an elevated probability. The metrics side scores DST prediction
//! files with joint goal accuracy, slot accuracy, relative slot accuracy,
//! and a domain / slot-meta / value mismatch taxonomy.

pub mod corpus;
pub mod entity;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod skm;
pub mod tokenizer;

pub use error::{Error, Result};
