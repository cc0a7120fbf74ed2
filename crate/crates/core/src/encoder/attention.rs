use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EncoderError;
use crate::nn::{params_join as join, softmax, Linear, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    None,
    /// Learned query/key/value maps.
    Weighted,
    /// Query, key and value are the encoder states themselves.
    Unweighted,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::None => "none",
            AttentionMode::Weighted => "weighted",
            AttentionMode::Unweighted => "unweighted",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(AttentionMode::None),
            "weighted" => Ok(AttentionMode::Weighted),
            "unweighted" => Ok(AttentionMode::Unweighted),
            _ => Err(format!("unknown attention mode {s:?}")),
        }
    }
}

/// Single-head scaled dot-product self-attention,
/// `softmax(Q Kᵀ / √d) V`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub mode: AttentionMode,
    pub input_dim: usize,
    pub query: Option<Linear>,
    pub key: Option<Linear>,
    pub value: Option<Linear>,
}

impl Parameters for AttentionLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (name, l) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
        ] {
            if let Some(l) = l {
                l.visit(&join(prefix, name), f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in [&mut self.query, &mut self.key, &mut self.value]
            .into_iter()
            .flatten()
        {
            l.visit_mut(f);
        }
    }
}

pub struct AttentionTrace {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Row-stochastic attention weights, `s × s`.
    pub weights: Array2<f64>,
}

impl AttentionLayer {
    pub fn new(mode: AttentionMode, input_dim: usize, width: usize, rng: &mut impl Rng) -> Self {
        let make = |rng: &mut _| Some(Linear::new(input_dim, width, rng));
        let (query, key, value) = match mode {
            AttentionMode::Weighted => (make(rng), make(rng), make(rng)),
            _ => (None, None, None),
        };
        AttentionLayer {
            mode,
            input_dim,
            query,
            key,
            value,
        }
    }

    pub fn output_dim(&self) -> usize {
        match (&self.mode, &self.value) {
            (AttentionMode::Weighted, Some(v)) => v.output_dim(),
            _ => self.input_dim,
        }
    }

    pub fn forward(
        &self,
        h: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, AttentionTrace), EncoderError> {
        if self.mode == AttentionMode::None {
            return Err(EncoderError::NoAttention);
        }
        if h.ncols() != self.input_dim {
            return Err(EncoderError::DimMismatch {
                expected: self.input_dim,
                got: h.ncols(),
            });
        }
        let (q, k, v) = match self.mode {
            AttentionMode::Weighted => (
                self.query.as_ref().unwrap().forward(h),
                self.key.as_ref().unwrap().forward(h),
                self.value.as_ref().unwrap().forward(h),
            ),
            _ => (h.to_owned(), h.to_owned(), h.to_owned()),
        };
        let scale = 1.0 / (k.ncols() as f64).sqrt();
        let scores = q.dot(&k.t()) * scale;
        let mut weights = Array2::zeros(scores.raw_dim());
        for (i, row) in scores.rows().into_iter().enumerate() {
            weights.row_mut(i).assign(&softmax(row));
        }
        let out = weights.dot(&v);
        Ok((out, AttentionTrace { q, k, v, weights }))
    }

    pub fn attend(&self, h: ArrayView2<f64>) -> Result<Array2<f64>, EncoderError> {
        Ok(self.forward(h)?.0)
    }

    pub fn backward(
        &self,
        h: ArrayView2<f64>,
        trace: &AttentionTrace,
        d_out: ArrayView2<f64>,
        grad: &mut AttentionLayer,
    ) -> Array2<f64> {
        let scale = 1.0 / (trace.k.ncols() as f64).sqrt();
        let a = &trace.weights;
        let d_a = d_out.dot(&trace.v.t());
        let d_v = a.t().dot(&d_out);
        let inner = (&d_a * a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_scores = a * &(&d_a - &inner) * scale;
        let d_q = d_scores.dot(&trace.k);
        let d_k = d_scores.t().dot(&trace.q);
        match self.mode {
            AttentionMode::Weighted => {
                let gq = grad.query.as_mut().unwrap();
                let mut d_h = self.query.as_ref().unwrap().backward(h, d_q.view(), gq);
                let gk = grad.key.as_mut().unwrap();
                d_h += &self.key.as_ref().unwrap().backward(h, d_k.view(), gk);
                let gv = grad.value.as_mut().unwrap();
                d_h += &self.value.as_ref().unwrap().backward(h, d_v.view(), gv);
                d_h
            }
            _ => d_q + d_k + d_v,
        }
    }
}
