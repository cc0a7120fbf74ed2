use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{glorot, orthogonal_gates, params_join as join, sigmoid, Parameters};

/// One LSTM direction. Gate blocks are stacked as `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4H × input`
    pub w: Array2<f64>,
    /// `4H × H`
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

crate::impl_parameters!(LstmCell { w, u, b });

/// Saved activations of a forward pass.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    /// Post-activation gates, `s × 4H`.
    gates: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    pub h: Array2<f64>,
}

impl LstmCell {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        LstmCell {
            w: glorot(4 * hidden, input, rng),
            u: orthogonal_gates(4, hidden, rng),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, xs: ArrayView2<f64>) -> LstmTrace {
        let steps = xs.nrows();
        let hd = self.hidden();
        let pre = xs.dot(&self.w.t()) + &self.b;
        let mut gates = Array2::zeros((steps, 4 * hd));
        let mut c = Array2::zeros((steps, hd));
        let mut tanh_c = Array2::zeros((steps, hd));
        let mut h = Array2::zeros((steps, hd));
        let mut h_prev = Array1::<f64>::zeros(hd);
        let mut c_prev = Array1::<f64>::zeros(hd);

        for t in 0..steps {
            let z = &pre.row(t) + &self.u.dot(&h_prev);
            let mut g_row = gates.row_mut(t);
            for k in 0..hd {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[hd + k]);
                let g = z[2 * hd + k].tanh();
                let o = sigmoid(z[3 * hd + k]);
                g_row[k] = i;
                g_row[hd + k] = f;
                g_row[2 * hd + k] = g;
                g_row[3 * hd + k] = o;
                let ct = f * c_prev[k] + i * g;
                let tc = ct.tanh();
                c[[t, k]] = ct;
                tanh_c[[t, k]] = tc;
                h[[t, k]] = o * tc;
            }
            h_prev = h.row(t).to_owned();
            c_prev = c.row(t).to_owned();
        }
        LstmTrace {
            gates,
            c,
            tanh_c,
            h,
        }
    }

    /// Backpropagates `d_h` (gradient w.r.t. every output state) through
    /// time. Accumulates into `grad` and returns `∂L/∂xs`.
    pub fn backward(
        &self,
        xs: ArrayView2<f64>,
        trace: &LstmTrace,
        d_h: ArrayView2<f64>,
        grad: &mut LstmCell,
    ) -> Array2<f64> {
        let steps = xs.nrows();
        let hd = self.hidden();
        let mut dz = Array2::<f64>::zeros((steps, 4 * hd));
        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);

        for t in (0..steps).rev() {
            let g_row = trace.gates.row(t);
            let mut dz_row = dz.row_mut(t);
            for k in 0..hd {
                let (i, f, g, o) = (
                    g_row[k],
                    g_row[hd + k],
                    g_row[2 * hd + k],
                    g_row[3 * hd + k],
                );
                let tc = trace.tanh_c[[t, k]];
                let c_prev = if t > 0 { trace.c[[t - 1, k]] } else { 0.0 };
                let dh = d_h[[t, k]] + dh_next[k];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                dz_row[k] = dc * g * i * (1.0 - i);
                dz_row[hd + k] = dc * c_prev * f * (1.0 - f);
                dz_row[2 * hd + k] = dc * i * (1.0 - g * g);
                dz_row[3 * hd + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next = self.u.t().dot(&dz.row(t));
        }

        grad.w += &dz.t().dot(&xs);
        grad.b += &dz.sum_axis(Axis(0));
        if steps > 1 {
            let h_prev = trace.h.slice(s![..steps - 1, ..]);
            grad.u += &dz.slice(s![1.., ..]).t().dot(&h_prev);
        }
        dz.dot(&self.w)
    }
}

/// Forward and backward LSTMs over the same sequence; outputs are the
/// per-position concatenation `[forward_t, backward_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl Parameters for BiLstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.fwd.visit_mut(f);
        self.bwd.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace {
    reversed: Array2<f64>,
    fwd: LstmTrace,
    /// Trace over the reversed input; row `r` belongs to position `s-1-r`.
    bwd: LstmTrace,
}

pub(crate) fn reverse_rows(x: ArrayView2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl BiLstm {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            fwd: LstmCell::new(input, hidden, rng),
            bwd: LstmCell::new(input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn trace(&self, xs: ArrayView2<f64>) -> BiLstmTrace {
        let reversed = reverse_rows(xs);
        BiLstmTrace {
            fwd: self.fwd.forward(xs),
            bwd: self.bwd.forward(reversed.view()),
            reversed,
        }
    }

    /// All positions, `s × 2H`.
    pub fn states(&self, trace: &BiLstmTrace) -> Array2<f64> {
        let hd = self.hidden();
        let steps = trace.fwd.h.nrows();
        let mut out = Array2::zeros((steps, 2 * hd));
        out.slice_mut(s![.., ..hd]).assign(&trace.fwd.h);
        out.slice_mut(s![.., hd..])
            .assign(&trace.bwd.h.slice(s![..;-1, ..]));
        out
    }

    /// Final forward state concatenated with the final backward state
    /// (the one produced after reading the first position).
    pub fn final_states(&self, trace: &BiLstmTrace) -> Array1<f64> {
        let last = trace.fwd.h.nrows() - 1;
        let mut out = trace.fwd.h.row(last).to_vec();
        out.extend(trace.bwd.h.row(last).iter());
        Array1::from(out)
    }

    /// Backward pass for gradients w.r.t. all positions' states (`s × 2H`).
    pub fn backward_states(
        &self,
        xs: ArrayView2<f64>,
        trace: &BiLstmTrace,
        d_states: ArrayView2<f64>,
        grad: &mut BiLstm,
    ) -> Array2<f64> {
        let hd = self.hidden();
        let d_f = d_states.slice(s![.., ..hd]);
        let d_b = reverse_rows(d_states.slice(s![.., hd..]));
        let dx_f = self.fwd.backward(xs, &trace.fwd, d_f, &mut grad.fwd);
        let dx_b = self
            .bwd
            .backward(trace.reversed.view(), &trace.bwd, d_b.view(), &mut grad.bwd);
        dx_f + reverse_rows(dx_b.view())
    }

    /// Backward pass for a gradient w.r.t. [`BiLstm::final_states`].
    pub fn backward_final(
        &self,
        xs: ArrayView2<f64>,
        trace: &BiLstmTrace,
        d_final: &[f64],
        grad: &mut BiLstm,
    ) -> Array2<f64> {
        let hd = self.hidden();
        let steps = xs.nrows();
        let mut d_f = Array2::zeros((steps, hd));
        let mut d_b = Array2::zeros((steps, hd));
        d_f.row_mut(steps - 1)
            .assign(&ndarray::aview1(&d_final[..hd]));
        d_b.row_mut(steps - 1)
            .assign(&ndarray::aview1(&d_final[hd..]));
        let dx_f = self.fwd.backward(xs, &trace.fwd, d_f.view(), &mut grad.fwd);
        let dx_b = self
            .bwd
            .backward(trace.reversed.view(), &trace.bwd, d_b.view(), &mut grad.bwd);
        dx_f + reverse_rows(dx_b.view())
    }
}
