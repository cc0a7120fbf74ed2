use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::glorot;

/// Row-wise affine map `y = x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

crate::impl_parameters!(Linear { w, b });

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: glorot(output, input, rng),
            b: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        d_out: ArrayView2<f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        grad.w += &d_out.t().dot(&x);
        grad.b += &d_out.sum_axis(Axis(0));
        d_out.dot(&self.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{flatten, set_from_flat, zeroed};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(3, 2, &mut rng);
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        let r = array![[0.3, -0.7], [1.1, 0.2]];
        let loss = |l: &Linear, x: &Array2<f64>| (l.forward(x.view()) * &r).sum();
        let mut g = zeroed(&lin);
        let dx = lin.backward(x.view(), r.view(), &mut g);

        let flat = flatten(&lin);
        let gflat = flatten(&g);
        let h = 1e-5;
        for i in 0..flat.len() {
            let mut p = lin.clone();
            let mut f = flat.clone();
            f[i] += h;
            set_from_flat(&mut p, &f);
            let up = loss(&p, &x);
            f[i] -= 2.0 * h;
            set_from_flat(&mut p, &f);
            let down = loss(&p, &x);
            assert!(((up - down) / (2.0 * h) - gflat[i]).abs() < 1e-8);
        }
        for ((i, j), d) in dx.indexed_iter() {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let up = loss(&lin, &xp);
            xp[[i, j]] -= 2.0 * h;
            let down = loss(&lin, &xp);
            assert!(((up - down) / (2.0 * h) - d).abs() < 1e-8);
        }
    }
}
