//! Context encoder: bidirectional GRU with optional self-attention on top.

mod attention;
mod gru;

use thiserror::Error;

pub use attention::{AttentionLayer, AttentionMode, AttentionTrace};
pub use gru::{BiGruEncoder, BiGruTrace, GruCell, GruTrace, RecurrentMasks};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncoderError {
    #[error("input width {got} does not match expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("attention layer is disabled")]
    NoAttention,
}

/// Runs the encoder without dropout.
pub fn encode(
    enc: &BiGruEncoder,
    xs: ndarray::ArrayView2<f64>,
) -> Result<ndarray::Array2<f64>, EncoderError> {
    if xs.nrows() == 0 {
        return Err(EncoderError::EmptySequence);
    }
    if xs.ncols() != enc.input_dim() {
        return Err(EncoderError::DimMismatch {
            expected: enc.input_dim(),
            got: xs.ncols(),
        });
    }
    Ok(enc.forward(xs, None).0)
}

pub fn attend(
    layer: &AttentionLayer,
    h: ndarray::ArrayView2<f64>,
) -> Result<ndarray::Array2<f64>, EncoderError> {
    layer.attend(h)
}
