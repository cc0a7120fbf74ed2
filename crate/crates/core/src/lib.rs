//! Segmentation of technical-support questions into non-natural-language
//! spans (commands, outputs, errors, file contents, semi-structured data,
//! paths/URLs) with a BIO-tagging GRU-CRF, plus the evaluation and retrieval
//! tooling around it.

pub mod baselines;
pub mod cli;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod encoder;
pub mod evalmetrics;
pub mod nn;
pub mod retrieval;
pub mod synth;
pub mod trainer;
