//! Casing-robust sequence labeling.
//!
//! Builds the six casing flavors of a labeled corpus and trains word-level
//! BiLSTM(-CRF) taggers on them, with a character-level BiLSTM truecaser for
//! the truecased flavors. Each tagger is scored on cased and uncased test
//! data.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod flavors;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synthetic;
pub mod tagger;
pub mod truecaser;
