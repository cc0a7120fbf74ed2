//! Fusion of several contextual streams: plain concatenation, or a softmax
//! weighted sum of projected streams whose weights come from the projected
//! vectors themselves (DME) or from a small BiLSTM run over each projected
//! stream (CDME).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingError;
use crate::nn::{params_join as join, BiLstm, BiLstmTrace, Linear, Parameters};

/// Hidden units per direction of the CDME context BiLSTM.
pub const CDME_HIDDEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    Concat,
    Dme,
    Cdme,
}

impl fmt::Display for CombineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombineMode::Concat => "concat",
            CombineMode::Dme => "dme",
            CombineMode::Cdme => "cdme",
        })
    }
}

impl FromStr for CombineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(CombineMode::Concat),
            "dme" => Ok(CombineMode::Dme),
            "cdme" => Ok(CombineMode::Cdme),
            _ => Err(format!("unknown combiner mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaCombiner {
    pub mode: CombineMode,
    pub dims: Vec<usize>,
    /// One `d' × d_i` projection per stream; empty in concat mode.
    pub projections: Vec<Linear>,
    /// Attention vector `a` (as a `1 × k` map) and scalar bias `b`.
    pub attention: Option<Linear>,
    /// Context BiLSTM shared by all streams (CDME only).
    pub context: Option<BiLstm>,
}

impl Parameters for MetaCombiner {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, p) in self.projections.iter().enumerate() {
            p.visit(&join(prefix, &format!("proj{i}")), f);
        }
        if let Some(a) = &self.attention {
            a.visit(&join(prefix, "attn"), f);
        }
        if let Some(c) = &self.context {
            c.visit(&join(prefix, "context"), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for p in &mut self.projections {
            p.visit_mut(f);
        }
        if let Some(a) = &mut self.attention {
            a.visit_mut(f);
        }
        if let Some(c) = &mut self.context {
            c.visit_mut(f);
        }
    }
}

/// Intermediate values of one document's combination.
pub struct CombinerTrace {
    projected: Vec<Array2<f64>>,
    contexts: Vec<(BiLstmTrace, Array2<f64>)>,
    /// `s × n` stream weights; empty for concat.
    pub weights: Array2<f64>,
}

impl MetaCombiner {
    pub fn new(
        mode: CombineMode,
        dims: Vec<usize>,
        projected_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (projections, attention, context) = match mode {
            CombineMode::Concat => (Vec::new(), None, None),
            CombineMode::Dme => (
                dims.iter()
                    .map(|&d| Linear::new(d, projected_dim, rng))
                    .collect(),
                Some(Linear::new(projected_dim, 1, rng)),
                None,
            ),
            CombineMode::Cdme => (
                dims.iter()
                    .map(|&d| Linear::new(d, projected_dim, rng))
                    .collect(),
                Some(Linear::new(2 * CDME_HIDDEN, 1, rng)),
                Some(BiLstm::new(projected_dim, CDME_HIDDEN, rng)),
            ),
        };
        MetaCombiner {
            mode,
            dims,
            projections,
            attention,
            context,
        }
    }

    pub fn stream_count(&self) -> usize {
        self.dims.len()
    }

    pub fn output_dim(&self) -> usize {
        match self.mode {
            CombineMode::Concat => self.dims.iter().sum(),
            _ => self.projections[0].output_dim(),
        }
    }

    fn check(&self, streams: &[Array2<f64>]) -> Result<usize, EmbeddingError> {
        if streams.len() != self.dims.len() {
            return Err(EmbeddingError::StreamCountMismatch {
                expected: self.dims.len(),
                got: streams.len(),
            });
        }
        let tokens = streams.first().map_or(0, |s| s.nrows());
        for (i, (s, &d)) in streams.iter().zip(&self.dims).enumerate() {
            if s.ncols() != d {
                return Err(EmbeddingError::DimMismatch {
                    stream: i,
                    expected: d,
                    got: s.ncols(),
                });
            }
            if s.nrows() != tokens {
                return Err(EmbeddingError::Format(format!(
                    "stream {i} has {} rows, expected {tokens}",
                    s.nrows()
                )));
            }
        }
        Ok(tokens)
    }

    pub fn forward(
        &self,
        streams: &[Array2<f64>],
    ) -> Result<(Array2<f64>, CombinerTrace), EmbeddingError> {
        let tokens = self.check(streams)?;
        if self.mode == CombineMode::Concat {
            let views: Vec<ArrayView2<f64>> = streams.iter().map(|s| s.view()).collect();
            let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
            let trace = CombinerTrace {
                projected: Vec::new(),
                contexts: Vec::new(),
                weights: Array2::zeros((tokens, 0)),
            };
            return Ok((out, trace));
        }

        let attn = self
            .attention
            .as_ref()
            .expect("attention in weighted modes");
        let projected: Vec<Array2<f64>> = self
            .projections
            .iter()
            .zip(streams)
            .map(|(p, s)| p.forward(s.view()))
            .collect();
        let mut contexts = Vec::new();
        let mut logits = Array2::zeros((tokens, streams.len()));
        for (i, proj) in projected.iter().enumerate() {
            let feats = match &self.context {
                Some(lstm) => {
                    let tr = lstm.trace(proj.view());
                    let states = lstm.states(&tr);
                    contexts.push((tr, states));
                    contexts.last().unwrap().1.view()
                }
                None => proj.view(),
            };
            let col = attn.forward(feats);
            logits.column_mut(i).assign(&col.column(0));
        }

        let mut weights = Array2::zeros(logits.raw_dim());
        for (j, row) in logits.rows().into_iter().enumerate() {
            weights.row_mut(j).assign(&crate::nn::softmax(row));
        }
        let mut out = Array2::zeros((tokens, self.output_dim()));
        for (i, proj) in projected.iter().enumerate() {
            let w = weights.column(i).insert_axis(Axis(1));
            out += &(&w * proj);
        }
        Ok((
            out,
            CombinerTrace {
                projected,
                contexts,
                weights,
            },
        ))
    }

    pub fn combine(&self, streams: &[Array2<f64>]) -> Result<Array2<f64>, EmbeddingError> {
        Ok(self.forward(streams)?.0)
    }

    /// Accumulates parameter gradients for `∂L/∂output`.
    pub fn backward(
        &self,
        streams: &[Array2<f64>],
        trace: &CombinerTrace,
        d_out: ArrayView2<f64>,
        grad: &mut MetaCombiner,
    ) {
        if self.mode == CombineMode::Concat {
            return;
        }
        let attn = self.attention.as_ref().unwrap();
        let n = streams.len();
        let tokens = d_out.nrows();

        // dα_ij = d_out_j · w'_ij, then through the softmax over streams.
        let mut d_alpha = Array2::<f64>::zeros((tokens, n));
        for (i, proj) in trace.projected.iter().enumerate() {
            let dot = (&d_out * proj).sum_axis(Axis(1));
            d_alpha.column_mut(i).assign(&dot);
        }
        let mut d_logits = Array2::<f64>::zeros((tokens, n));
        for j in 0..tokens {
            let a = trace.weights.row(j);
            let da = d_alpha.row(j);
            let inner = a.dot(&da);
            for i in 0..n {
                d_logits[[j, i]] = a[i] * (da[i] - inner);
            }
        }

        let grad_attn = grad.attention.as_mut().unwrap();
        for (i, proj) in trace.projected.iter().enumerate() {
            let w = trace.weights.column(i).insert_axis(Axis(1));
            let mut d_proj = &d_out * &w;
            let d_logit = d_logits.column(i).insert_axis(Axis(1)).to_owned();
            match (&self.context, &mut grad.context) {
                (Some(lstm), Some(grad_lstm)) => {
                    let (tr, states) = &trace.contexts[i];
                    let d_states = attn.backward(states.view(), d_logit.view(), grad_attn);
                    d_proj += &lstm.backward_states(proj.view(), tr, d_states.view(), grad_lstm);
                }
                _ => {
                    d_proj += &attn.backward(proj.view(), d_logit.view(), grad_attn);
                }
            }
            self.projections[i].backward(
                streams[i].view(),
                d_proj.view(),
                &mut grad.projections[i],
            );
        }
    }
}

/// Mean attention weight per stream over a document, for reporting.
pub fn mean_weights(trace: &CombinerTrace) -> Array1<f64> {
    if trace.weights.nrows() == 0 {
        return Array1::zeros(trace.weights.ncols());
    }
    trace.weights.mean_axis(Axis(0)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, set_from_flat, zeroed};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    /// Plain-loop re-implementation of projection, per-stream logits,
    /// softmax over streams and weighted sum.
    fn dme_oracle(c: &MetaCombiner, streams: &[Array2<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let tokens = streams[0].nrows();
        let attn = c.attention.as_ref().unwrap();
        let dp = c.output_dim();
        let mut outs = Vec::new();
        let mut alphas = Vec::new();
        for j in 0..tokens {
            let mut projected = Vec::new();
            for (i, s) in streams.iter().enumerate() {
                let p = &c.projections[i];
                let v: Vec<f64> = (0..dp)
                    .map(|r| (0..s.ncols()).map(|k| p.w[[r, k]] * s[[j, k]]).sum::<f64>() + p.b[r])
                    .collect();
                projected.push(v);
            }
            let logits: Vec<f64> = projected
                .iter()
                .map(|v| v.iter().zip(attn.w.row(0)).map(|(a, b)| a * b).sum::<f64>() + attn.b[0])
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let alpha: Vec<f64> = e.iter().map(|x| x / z).collect();
            let out: Vec<f64> = (0..dp)
                .map(|r| (0..streams.len()).map(|i| alpha[i] * projected[i][r]).sum())
                .collect();
            outs.push(out);
            alphas.push(alpha);
        }
        (outs, alphas)
    }

    #[test]
    fn single_stream_is_its_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = MetaCombiner::new(CombineMode::Dme, vec![4], 3, &mut rng);
        let x = randn(5, 4, &mut rng);
        let (out, trace) = c.forward(std::slice::from_ref(&x)).unwrap();
        assert!(trace.weights.iter().all(|&a| a == 1.0));
        let want = c.projections[0].forward(x.view());
        assert!((&out - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn zero_attention_averages() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = MetaCombiner::new(CombineMode::Dme, vec![3, 5], 4, &mut rng);
        let a = c.attention.as_mut().unwrap();
        a.w.fill(0.0);
        a.b.fill(0.0);
        let streams = vec![randn(6, 3, &mut rng), randn(6, 5, &mut rng)];
        let (out, trace) = c.forward(&streams).unwrap();
        assert!(trace.weights.iter().all(|&w| w == 0.5));
        let want = (c.projections[0].forward(streams[0].view())
            + c.projections[1].forward(streams[1].view()))
            / 2.0;
        assert!((&out - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn dme_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = MetaCombiner::new(CombineMode::Dme, vec![3, 4, 2], 5, &mut rng);
        let streams = vec![
            randn(7, 3, &mut rng),
            randn(7, 4, &mut rng),
            randn(7, 2, &mut rng),
        ];
        let (out, trace) = c.forward(&streams).unwrap();
        let (want_out, want_alpha) = dme_oracle(&c, &streams);
        for j in 0..7 {
            let sum: f64 = trace.weights.row(j).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for i in 0..3 {
                assert!((trace.weights[[j, i]] - want_alpha[j][i]).abs() < 1e-6);
            }
            for r in 0..5 {
                assert!((out[[j, r]] - want_out[j][r]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn concat_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = MetaCombiner::new(CombineMode::Concat, vec![2, 3], 8, &mut rng);
        let streams = vec![randn(4, 2, &mut rng), randn(4, 3, &mut rng)];
        let out = c.combine(&streams).unwrap();
        assert_eq!(out.dim(), (4, 5));
        assert_eq!(out[[2, 3]], streams[1][[2, 1]]);
        assert!(matches!(
            c.combine(&streams[..1]),
            Err(EmbeddingError::StreamCountMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn dme_weights_depend_only_on_token_cdme_on_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dme = MetaCombiner::new(CombineMode::Dme, vec![3, 3], 4, &mut rng);
        let cdme = MetaCombiner::new(CombineMode::Cdme, vec![3, 3], 4, &mut rng);
        // Positions 1 and 4 carry the same per-token vectors but differ in context.
        let mut a = randn(6, 3, &mut rng);
        let mut b = randn(6, 3, &mut rng);
        let (ra, rb) = (a.row(1).to_owned(), b.row(1).to_owned());
        a.row_mut(4).assign(&ra);
        b.row_mut(4).assign(&rb);
        let streams = vec![a, b];
        let (_, t) = dme.forward(&streams).unwrap();
        assert_eq!(t.weights.row(1), t.weights.row(4));
        let (_, t) = cdme.forward(&streams).unwrap();
        assert!((t.weights[[1, 0]] - t.weights[[4, 0]]).abs() > 1e-9);
        for row in t.weights.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&w| w > 0.0 && w < 1.0));
        }
    }

    fn check_gradients(mode: CombineMode, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = MetaCombiner::new(mode, vec![3, 2, 4], 3, &mut rng);
        let streams = vec![
            randn(5, 3, &mut rng),
            randn(5, 2, &mut rng),
            randn(5, 4, &mut rng),
        ];
        let r = randn(5, c.output_dim(), &mut rng);
        let loss = |m: &MetaCombiner| (m.combine(&streams).unwrap() * &r).sum();
        let (_, trace) = c.forward(&streams).unwrap();
        let mut g = zeroed(&c);
        c.backward(&streams, &trace, r.view(), &mut g);
        let flat = flatten(&c);
        let gflat = flatten(&g);
        for i in 0..flat.len() {
            let mut p = c.clone();
            let mut f = flat.clone();
            f[i] += 1e-5;
            set_from_flat(&mut p, &f);
            let up = loss(&p);
            f[i] -= 2e-5;
            set_from_flat(&mut p, &f);
            let down = loss(&p);
            let num = (up - down) / 2e-5;
            let err = (num - gflat[i]).abs() / num.abs().max(gflat[i].abs()).max(1e-6);
            assert!(
                err < 1e-4,
                "{mode} param {i}: fd {num} analytic {}",
                gflat[i]
            );
        }
    }

    #[test]
    fn dme_gradients() {
        check_gradients(CombineMode::Dme, 10);
    }

    #[test]
    fn cdme_gradients() {
        check_gradients(CombineMode::Cdme, 11);
    }
}
