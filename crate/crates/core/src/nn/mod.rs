//! Small dense building blocks with hand-written backward passes.
//!
//! Everything computes in `f64`. Layers expose their tensors through
//! [`Parameters`], which fixes a visiting order used by the optimizer, the
//! checkpoint writer and the gradient checker alike.

mod gradcheck;
mod linear;
mod lstm;
mod params;

pub use gradcheck::{check_gradient, relative_error, GradReport, REL_FLOOR};
pub use linear::Linear;
pub use lstm::{BiLstm, BiLstmTrace, LstmCell, LstmTrace};
#[doc(hidden)]
pub use params::join as params_join;
pub use params::{
    accumulate, flatten, param_count, scale, set_from_flat, zeroed, ParamInfo, Parameters,
};

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted `log Σ exp(x)`; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: ArrayView1<f64>) -> Array1<f64> {
    let max = xs.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let e = xs.mapv(|x| (x - max).exp());
    let z = e.sum();
    e / z
}

/// Glorot/Xavier uniform initialization for a `rows × cols` map.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).unwrap();
    Array2::from_shape_fn((rows, cols), |_| round_f32(dist.sample(rng)))
}

/// A random `n × n` orthogonal matrix (Gram–Schmidt on Gaussian rows).
pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((n, n));
    let mut i = 0;
    while i < n {
        let mut v: Array1<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for j in 0..i {
            let prev = m.row(j);
            let proj = prev.dot(&v);
            v.scaled_add(-proj, &prev);
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        m.row_mut(i).assign(&(v / norm));
        i += 1;
    }
    m.mapv_inplace(round_f32);
    m
}

/// Stacks `blocks` orthogonal `n × n` matrices vertically, one per gate.
pub fn orthogonal_gates(blocks: usize, n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut out = Array2::zeros((blocks * n, n));
    for b in 0..blocks {
        out.slice_mut(ndarray::s![b * n..(b + 1) * n, ..])
            .assign(&orthogonal(n, rng));
    }
    out
}

/// Nearest value representable in single precision. Stored parameters are
/// kept on this grid so that float32 checkpoints are lossless.
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp([0.0; 13]) - 13f64.ln()).abs() < 1e-12);
        assert!((logsumexp([1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(logsumexp([f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(Vec::<f64>::new()), f64::NEG_INFINITY);
    }

    #[test]
    fn sigmoid_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = orthogonal(8, &mut rng);
        let eye = q.dot(&q.t());
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[[i, j]] - want).abs() < 1e-6);
            }
        }
    }
}
