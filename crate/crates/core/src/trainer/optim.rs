use std::collections::HashMap;

use ndarray::Array1;

use super::model::{Gradients, SegModel};
use crate::nn::{flatten, param_count, round_f32, Parameters};

/// Adam with bias correction. Embedding tables are updated lazily: only
/// rows with a gradient in the current step move, each with its own moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
    lookup: HashMap<usize, (Array1<f64>, Array1<f64>)>,
    subword: HashMap<usize, (Array1<f64>, Array1<f64>)>,
}

struct Hyper {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
}

impl Hyper {
    fn update(&self, p: &mut f64, g: f64, m: &mut f64, v: &mut f64) {
        *m = self.b1 * *m + (1.0 - self.b1) * g;
        *v = self.b2 * *v + (1.0 - self.b2) * g * g;
        let m_hat = *m / self.c1;
        let v_hat = *v / self.c2;
        *p = round_f32(*p - self.lr * m_hat / (v_hat.sqrt() + self.eps));
    }
}

impl Adam {
    pub fn new(learning_rate: f64, model: &SegModel) -> Self {
        let n = param_count(&model.dense);
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            lookup: HashMap::new(),
            subword: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, model: &mut SegModel, grads: &Gradients) {
        self.step += 1;
        let h = Hyper {
            lr: self.learning_rate,
            b1: self.beta1,
            b2: self.beta2,
            eps: self.epsilon,
            c1: 1.0 - self.beta1.powi(self.step),
            c2: 1.0 - self.beta2.powi(self.step),
        };
        let g = flatten(&grads.dense);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        model.dense.visit_mut(&mut |data| {
            for (k, p) in data.iter_mut().enumerate() {
                let i = offset + k;
                h.update(p, g[i], &mut m[i], &mut v[i]);
            }
            offset += data.len();
        });

        if let Some(table) = &mut model.lookup {
            for (&r, g) in &grads.lookup.rows {
                let (m, v) = self
                    .lookup
                    .entry(r)
                    .or_insert_with(|| (Array1::zeros(g.len()), Array1::zeros(g.len())));
                let mut row = table.matrix.row_mut(r);
                for k in 0..g.len() {
                    h.update(&mut row[k], g[k], &mut m[k], &mut v[k]);
                }
            }
        }
        if let Some(sw) = &mut model.subword {
            for (&b, g) in &grads.subword.rows {
                let (m, v) = self
                    .subword
                    .entry(b)
                    .or_insert_with(|| (Array1::zeros(g.len()), Array1::zeros(g.len())));
                let row = sw.row_mut(b);
                for k in 0..g.len() {
                    h.update(&mut row[k], g[k], &mut m[k], &mut v[k]);
                }
            }
        }
    }
}

/// Rescales `grads` so that their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
