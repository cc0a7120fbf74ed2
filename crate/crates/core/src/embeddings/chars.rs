use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use super::EmbeddingError;
use crate::nn::{glorot, params_join as join, BiLstm, BiLstmTrace, Parameters};

/// Width of the character lookup table.
pub const CHAR_DIM: usize = 16;
/// Hidden units per direction; the encoder output is twice this.
pub const CHAR_HIDDEN: usize = 40;
/// Code points below 256 get their own row; the rest share 128 hashed rows.
pub const CHAR_ROWS: usize = 256 + 128;

/// Character-level BiLSTM producing one 80-dimensional vector per token.
#[derive(Debug, Clone, PartialEq)]
pub struct CharEncoder {
    pub table: Array2<f64>,
    pub lstm: BiLstm,
}

impl Parameters for CharEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(
            &join(prefix, "table"),
            self.table.shape(),
            self.table.as_slice().unwrap(),
        );
        self.lstm.visit(&join(prefix, "lstm"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.table.as_slice_mut().unwrap());
        self.lstm.visit_mut(f);
    }
}

pub fn char_row(c: char) -> usize {
    let cp = c as usize;
    if cp < 256 {
        cp
    } else {
        256 + cp % 128
    }
}

/// Saved state of one token's forward pass.
pub struct CharTrace {
    rows: Vec<usize>,
    inputs: Array2<f64>,
    trace: BiLstmTrace,
}

impl CharEncoder {
    pub fn new(rng: &mut impl Rng) -> Self {
        CharEncoder {
            table: glorot(CHAR_ROWS, CHAR_DIM, rng),
            lstm: BiLstm::new(CHAR_DIM, CHAR_HIDDEN, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.lstm.hidden()
    }

    pub fn trace(&self, token: &str) -> Result<CharTrace, EmbeddingError> {
        if token.is_empty() {
            return Err(EmbeddingError::EmptyToken);
        }
        let rows: Vec<usize> = token.chars().map(char_row).collect();
        let mut inputs = Array2::zeros((rows.len(), self.table.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            inputs.row_mut(i).assign(&self.table.row(r));
        }
        let trace = self.lstm.trace(inputs.view());
        Ok(CharTrace {
            rows,
            inputs,
            trace,
        })
    }

    pub fn output(&self, trace: &CharTrace) -> Array1<f64> {
        self.lstm.final_states(&trace.trace)
    }

    pub fn encode(&self, token: &str) -> Result<Array1<f64>, EmbeddingError> {
        Ok(self.output(&self.trace(token)?))
    }

    pub fn backward(&self, trace: &CharTrace, d_out: ArrayView1<f64>, grad: &mut CharEncoder) {
        let d_out = d_out.to_vec();
        let d_inputs =
            self.lstm
                .backward_final(trace.inputs.view(), &trace.trace, &d_out, &mut grad.lstm);
        for (i, &r) in trace.rows.iter().enumerate() {
            let mut row = grad.table.row_mut(r);
            row += &d_inputs.row(i);
        }
    }
}

pub fn char_encode(enc: &CharEncoder, token: &str) -> Result<Array1<f64>, EmbeddingError> {
    enc.encode(token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, set_from_flat, zeroed};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn output_is_80_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = CharEncoder::new(&mut rng);
        for tok in ["a", "sudo", "/var/log/syslog", "ノドアカ"] {
            assert_eq!(char_encode(&enc, tok).unwrap().len(), 80);
        }
        assert!(matches!(enc.encode(""), Err(EmbeddingError::EmptyToken)));
    }

    #[test]
    fn palindrome_with_tied_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut enc = CharEncoder::new(&mut rng);
        enc.lstm.bwd = enc.lstm.fwd.clone();
        let out = enc.encode("racecar").unwrap();
        for k in 0..40 {
            assert_eq!(out[k], out[40 + k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = CharEncoder::new(&mut rng);
        let token = "ls-la";
        let r: Array1<f64> = (0..80).map(|_| StandardNormal.sample(&mut rng)).collect();
        let loss = |e: &CharEncoder| e.encode(token).unwrap().dot(&r);

        let trace = enc.trace(token).unwrap();
        let mut g = zeroed(&enc);
        enc.backward(&trace, r.view(), &mut g);
        let flat = flatten(&enc);
        let gflat = flatten(&g);
        // Probe table rows that are used plus a spread of LSTM weights.
        let used: Vec<usize> = token
            .chars()
            .flat_map(|c| (0..CHAR_DIM).map(move |k| char_row(c) * CHAR_DIM + k))
            .collect();
        let probes = used
            .into_iter()
            .chain((CHAR_ROWS * CHAR_DIM..flat.len()).step_by(97));
        for i in probes {
            let mut p = enc.clone();
            let mut f = flat.clone();
            f[i] += 1e-3;
            set_from_flat(&mut p, &f);
            let up = loss(&p);
            f[i] -= 2e-3;
            set_from_flat(&mut p, &f);
            let down = loss(&p);
            let num = (up - down) / 2e-3;
            let err = (num - gflat[i]).abs() / num.abs().max(gflat[i].abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: fd {num} analytic {}", gflat[i]);
        }
    }
}
