use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::nn::{glorot, orthogonal_gates, params_join as join, sigmoid, Parameters};

/// One GRU direction, gates stacked `[reset, update, candidate]`:
///
/// ```text
/// r = σ(W_r x + b_ir + U_r h + b_hr)
/// z = σ(W_z x + b_iz + U_z h + b_hz)
/// n = tanh(W_n x + b_in + r ⊙ (U_n h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b_in: Array1<f64>,
    pub b_hid: Array1<f64>,
}

crate::impl_parameters!(GruCell { w, u, b_in, b_hid });

pub struct GruTrace {
    /// Post-activation `[r, z, n]` per step.
    gates: Array2<f64>,
    /// `U_n h̃ + b_hn` per step.
    cand_hidden: Array2<f64>,
    /// Masked previous state `h̃` fed to `U` at each step.
    masked_prev: Array2<f64>,
    pub h: Array2<f64>,
}

impl GruCell {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruCell {
            w: glorot(3 * hidden, input, rng),
            u: orthogonal_gates(3, hidden, rng),
            b_in: Array1::zeros(3 * hidden),
            b_hid: Array1::zeros(3 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    /// Runs left to right. `rec_mask`, when given, multiplies the previous
    /// state before the recurrent product at every step.
    pub fn forward(&self, xs: ArrayView2<f64>, rec_mask: Option<ArrayView1<f64>>) -> GruTrace {
        let steps = xs.nrows();
        let hd = self.hidden();
        let pre = xs.dot(&self.w.t()) + &self.b_in;
        let mut gates = Array2::zeros((steps, 3 * hd));
        let mut cand_hidden = Array2::zeros((steps, hd));
        let mut masked_prev = Array2::zeros((steps, hd));
        let mut h = Array2::<f64>::zeros((steps, hd));
        let mut h_prev = Array1::<f64>::zeros(hd);

        for t in 0..steps {
            let hm = match rec_mask {
                Some(m) => &h_prev * &m,
                None => h_prev.clone(),
            };
            let c = self.u.dot(&hm) + &self.b_hid;
            for k in 0..hd {
                let r = sigmoid(pre[[t, k]] + c[k]);
                let z = sigmoid(pre[[t, hd + k]] + c[hd + k]);
                let n = (pre[[t, 2 * hd + k]] + r * c[2 * hd + k]).tanh();
                gates[[t, k]] = r;
                gates[[t, hd + k]] = z;
                gates[[t, 2 * hd + k]] = n;
                cand_hidden[[t, k]] = c[2 * hd + k];
                h[[t, k]] = (1.0 - z) * n + z * h_prev[k];
            }
            masked_prev.row_mut(t).assign(&hm);
            h_prev = h.row(t).to_owned();
        }
        GruTrace {
            gates,
            cand_hidden,
            masked_prev,
            h,
        }
    }

    pub fn backward(
        &self,
        xs: ArrayView2<f64>,
        trace: &GruTrace,
        d_h: ArrayView2<f64>,
        rec_mask: Option<ArrayView1<f64>>,
        grad: &mut GruCell,
    ) -> Array2<f64> {
        let steps = xs.nrows();
        let hd = self.hidden();
        let mut d_pre = Array2::<f64>::zeros((steps, 3 * hd));
        let mut d_c = Array2::<f64>::zeros((steps, 3 * hd));
        let mut dh_next = Array1::<f64>::zeros(hd);

        for t in (0..steps).rev() {
            let mut dh_prev_direct = Array1::<f64>::zeros(hd);
            for k in 0..hd {
                let r = trace.gates[[t, k]];
                let z = trace.gates[[t, hd + k]];
                let n = trace.gates[[t, 2 * hd + k]];
                let h_prev = if t > 0 { trace.h[[t - 1, k]] } else { 0.0 };
                let dh = d_h[[t, k]] + dh_next[k];
                let dn = dh * (1.0 - z);
                let dz = dh * (h_prev - n);
                dh_prev_direct[k] = dh * z;
                let dan = dn * (1.0 - n * n);
                let dr = dan * trace.cand_hidden[[t, k]];
                let dar = dr * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                d_pre[[t, k]] = dar;
                d_pre[[t, hd + k]] = daz;
                d_pre[[t, 2 * hd + k]] = dan;
                d_c[[t, k]] = dar;
                d_c[[t, hd + k]] = daz;
                d_c[[t, 2 * hd + k]] = dan * r;
            }
            let dhm = self.u.t().dot(&d_c.row(t));
            dh_next = match rec_mask {
                Some(m) => dh_prev_direct + &dhm * &m,
                None => dh_prev_direct + &dhm,
            };
        }

        grad.w += &d_pre.t().dot(&xs);
        grad.b_in += &d_pre.sum_axis(Axis(0));
        grad.u += &d_c.t().dot(&trace.masked_prev);
        grad.b_hid += &d_c.sum_axis(Axis(0));
        d_pre.dot(&self.w)
    }
}

/// Bidirectional GRU; output row `t` is `[forward_t, backward_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGruEncoder {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

impl Parameters for BiGruEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.fwd.visit(&join(prefix, "fwd"), f);
        self.bwd.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.fwd.visit_mut(f);
        self.bwd.visit_mut(f);
    }
}

/// Per-direction recurrent dropout masks (already scaled by `1/(1-p)`).
#[derive(Debug, Clone)]
pub struct RecurrentMasks {
    pub fwd: Array1<f64>,
    pub bwd: Array1<f64>,
}

impl RecurrentMasks {
    pub fn sample(hidden: usize, rate: f64, rng: &mut impl Rng) -> Self {
        let keep = 1.0 - rate;
        let mut draw = || -> Array1<f64> {
            (0..hidden)
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let fwd = draw();
        let bwd = draw();
        RecurrentMasks { fwd, bwd }
    }
}

pub struct BiGruTrace {
    reversed: Array2<f64>,
    fwd: GruTrace,
    bwd: GruTrace,
}

impl BiGruEncoder {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        BiGruEncoder {
            fwd: GruCell::new(input, hidden, rng),
            bwd: GruCell::new(input, hidden, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.w.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden()
    }

    pub fn forward(
        &self,
        xs: ArrayView2<f64>,
        masks: Option<&RecurrentMasks>,
    ) -> (Array2<f64>, BiGruTrace) {
        let hd = self.hidden();
        let reversed = xs.slice(s![..;-1, ..]).to_owned();
        let fwd = self.fwd.forward(xs, masks.map(|m| m.fwd.view()));
        let bwd = self
            .bwd
            .forward(reversed.view(), masks.map(|m| m.bwd.view()));
        let mut out = Array2::zeros((xs.nrows(), 2 * hd));
        out.slice_mut(s![.., ..hd]).assign(&fwd.h);
        out.slice_mut(s![.., hd..])
            .assign(&bwd.h.slice(s![..;-1, ..]));
        (out, BiGruTrace { reversed, fwd, bwd })
    }

    pub fn backward(
        &self,
        xs: ArrayView2<f64>,
        trace: &BiGruTrace,
        d_out: ArrayView2<f64>,
        masks: Option<&RecurrentMasks>,
        grad: &mut BiGruEncoder,
    ) -> Array2<f64> {
        let hd = self.hidden();
        let d_f = d_out.slice(s![.., ..hd]);
        let d_b = d_out.slice(s![..;-1, hd..]).to_owned();
        let dx_f = self.fwd.backward(
            xs,
            &trace.fwd,
            d_f,
            masks.map(|m| m.fwd.view()),
            &mut grad.fwd,
        );
        let dx_b = self.bwd.backward(
            trace.reversed.view(),
            &trace.bwd,
            d_b.view(),
            masks.map(|m| m.bwd.view()),
            &mut grad.bwd,
        );
        dx_f + dx_b.slice(s![..;-1, ..])
    }
}
