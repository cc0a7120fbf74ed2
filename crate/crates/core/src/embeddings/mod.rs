//! Per-token vector providers and the meta-embedding combiner that fuses
//! several contextual streams into one sequence.

mod chars;
mod combiner;
mod lookup;
mod streams;
mod subword;

use std::collections::BTreeMap;

use ndarray::Array1;
use thiserror::Error;

pub use chars::{char_encode, CharEncoder, CharTrace, CHAR_DIM, CHAR_HIDDEN, CHAR_ROWS};
pub use combiner::{mean_weights, CombineMode, CombinerTrace, MetaCombiner, CDME_HIDDEN};
pub use lookup::{lookup_embed, LookupTable, UNK_TOKEN};
pub use streams::{load_streams, read_streams, save_streams, write_streams, ContextualStreamSet};
pub use subword::{fnv1a, subword_embed, SubwordHashEmbedder};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed an empty token")]
    EmptyToken,
    #[error("stream file format error: {0}")]
    Format(String),
    #[error("token count mismatch for document {0:?}")]
    TokenCountMismatch(String),
    #[error("expected {expected} streams, got {got}")]
    StreamCountMismatch { expected: usize, got: usize },
    #[error("stream {stream} has width {got}, expected {expected}")]
    DimMismatch {
        stream: usize,
        expected: usize,
        got: usize,
    },
    #[error("lookup table format error at line {line}: {message}")]
    TableFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gradient for a row-indexed embedding table; only touched rows are stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub rows: BTreeMap<usize, Array1<f64>>,
}

impl SparseRows {
    pub fn add(&mut self, row: usize, grad: ndarray::ArrayView1<f64>, factor: f64) {
        self.rows
            .entry(row)
            .or_insert_with(|| Array1::zeros(grad.len()))
            .scaled_add(factor, &grad);
    }

    pub fn merge(&mut self, other: &SparseRows) {
        for (&row, g) in &other.rows {
            self.add(row, g.view(), 1.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.rows.values_mut() {
            *g *= factor;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.rows.values().map(|g| g.dot(g)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
