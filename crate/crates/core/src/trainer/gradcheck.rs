//! Finite-difference checks of every hand-written backward pass on small
//! random instances.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::SegModel;
use super::TrainConfig;
use crate::baselines::{logreg_objective, NUM_CLASSES};
use crate::corpus::{AnnotatedDocument, SegmentLabel, SegmentSpan};
use crate::crf::{nll_and_grads, CrfParams};
use crate::embeddings::{CharEncoder, CombineMode, LookupTable, MetaCombiner};
use crate::encoder::{AttentionLayer, AttentionMode, BiGruEncoder, RecurrentMasks};
use crate::nn::{check_gradient, flatten, set_from_flat, zeroed, GradReport, Parameters};

/// Finite-difference half-width used by every check.
pub const STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Crf,
    Gru,
    Char,
    AttentionWeighted,
    AttentionUnweighted,
    Dme,
    Cdme,
    Logistic,
    Model,
}

impl Component {
    pub const ALL: [Component; 9] = [
        Component::Crf,
        Component::Gru,
        Component::Char,
        Component::AttentionWeighted,
        Component::AttentionUnweighted,
        Component::Dme,
        Component::Cdme,
        Component::Logistic,
        Component::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Crf => "crf",
            Component::Gru => "gru",
            Component::Char => "char",
            Component::AttentionWeighted => "attention-weighted",
            Component::AttentionUnweighted => "attention-unweighted",
            Component::Dme => "dme",
            Component::Cdme => "cdme",
            Component::Logistic => "logistic",
            Component::Model => "model",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown component {s:?}"))
    }
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn weighted_sum(out: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (out * r).sum()
}

/// Checks `Σ r ⊙ f(params)` against the analytic gradient of a parameter
/// struct.
fn check_struct<P: Parameters + Clone>(
    name: &str,
    params: &P,
    grad: &P,
    mut eval: impl FnMut(&P) -> f64,
    probes: usize,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
) -> GradReport {
    let flat = flatten(params);
    let mut work = params.clone();
    check_gradient(
        name,
        &flat,
        &flatten(grad),
        |p| {
            set_from_flat(&mut work, p);
            eval(&work)
        },
        probes,
        STEP,
        tolerance,
        rng,
    )
}

fn check_crf(probes: usize, tol: f64, rng: &mut ChaCha8Rng) -> GradReport {
    let s = 5;
    let e = normal(s, 13, rng);
    let mut params = CrfParams::default();
    params.visit_mut(&mut |d| d.iter_mut().for_each(|v| *v = StandardNormal.sample(rng)));
    let gold: Vec<usize> = (0..s).map(|_| rng.random_range(0..13)).collect();
    let (_, d_e, d_p) = nll_and_grads(e.view(), &params, &gold).expect("valid instance");
    let mut report = check_struct(
        "crf",
        &params,
        &d_p,
        |p| nll_and_grads(e.view(), p, &gold).unwrap().0,
        probes,
        tol,
        rng,
    );
    let emissions = check_gradient(
        "crf",
        e.as_slice().unwrap(),
        d_e.as_slice().unwrap(),
        |flat| {
            let m = Array2::from_shape_vec((s, 13), flat.to_vec()).unwrap();
            nll_and_grads(m.view(), &params, &gold).unwrap().0
        },
        probes,
        STEP,
        tol,
        rng,
    );
    report.probes += emissions.probes;
    report.max_rel_error = report.max_rel_error.max(emissions.max_rel_error);
    report.passed &= emissions.passed;
    report
}

fn check_gru(probes: usize, tol: f64, rng: &mut ChaCha8Rng) -> GradReport {
    let enc = BiGruEncoder::new(4, 3, rng);
    let xs = normal(5, 4, rng) * 0.5;
    let r = normal(5, 6, rng);
    let masks = RecurrentMasks::sample(3, 0.3, rng);
    let (_, trace) = enc.forward(xs.view(), Some(&masks));
    let mut grad = zeroed(&enc);
    enc.backward(xs.view(), &trace, r.view(), Some(&masks), &mut grad);
    check_struct(
        "gru",
        &enc,
        &grad,
        |e| weighted_sum(&e.forward(xs.view(), Some(&masks)).0, &r),
        probes,
        tol,
        rng,
    )
}

fn check_char(probes: usize, tol: f64, rng: &mut ChaCha8Rng) -> GradReport {
    let enc = CharEncoder::new(rng);
    let token = "ls-la";
    let r = Array1::from_shape_fn(enc.output_dim(), |_| StandardNormal.sample(rng));
    let trace = enc.trace(token).expect("non-empty token");
    let mut grad = zeroed(&enc);
    enc.backward(&trace, r.view(), &mut grad);
    check_struct(
        "char",
        &enc,
        &grad,
        |e| (e.encode(token).unwrap() * &r).sum(),
        probes,
        tol,
        rng,
    )
}

fn check_attention(
    mode: AttentionMode,
    probes: usize,
    tol: f64,
    rng: &mut ChaCha8Rng,
) -> GradReport {
    let layer = AttentionLayer::new(mode, 4, 3, rng);
    let h = normal(5, 4, rng) * 0.5;
    let r = normal(5, layer.output_dim(), rng);
    let (_, trace) = layer.forward(h.view()).expect("non-empty input");
    let mut grad = zeroed(&layer);
    let d_h = layer.backward(h.view(), &trace, r.view(), &mut grad);
    let name = match mode {
        AttentionMode::Weighted => "attention-weighted",
        _ => "attention-unweighted",
    };
    let inputs = check_gradient(
        name,
        h.as_slice().unwrap(),
        d_h.as_slice().unwrap(),
        |flat| {
            let m = Array2::from_shape_vec((5, 4), flat.to_vec()).unwrap();
            weighted_sum(&layer.attend(m.view()).unwrap(), &r)
        },
        probes,
        STEP,
        tol,
        rng,
    );
    if mode != AttentionMode::Weighted {
        return inputs;
    }
    let mut report = check_struct(
        name,
        &layer,
        &grad,
        |l| weighted_sum(&l.attend(h.view()).unwrap(), &r),
        probes,
        tol,
        rng,
    );
    report.probes += inputs.probes;
    report.max_rel_error = report.max_rel_error.max(inputs.max_rel_error);
    report.passed &= inputs.passed;
    report
}

fn check_combiner(mode: CombineMode, probes: usize, tol: f64, rng: &mut ChaCha8Rng) -> GradReport {
    let dims = vec![3, 5, 4];
    let comb = MetaCombiner::new(mode, dims.clone(), 4, rng);
    let streams: Vec<Array2<f64>> = dims.iter().map(|&d| normal(6, d, rng)).collect();
    let r = normal(6, comb.output_dim(), rng);
    let (_, trace) = comb.forward(&streams).expect("matching streams");
    let mut grad = zeroed(&comb);
    comb.backward(&streams, &trace, r.view(), &mut grad);
    check_struct(
        &mode.to_string(),
        &comb,
        &grad,
        |c| weighted_sum(&c.combine(&streams).unwrap(), &r),
        probes,
        tol,
        rng,
    )
}

fn check_logistic(probes: usize, tol: f64, rng: &mut ChaCha8Rng) -> GradReport {
    let x = normal(15, 4, rng);
    let y: Vec<usize> = (0..15).map(|i| [0, 3, 6][i % 3]).collect();
    let mut present = [false; NUM_CLASSES];
    y.iter().for_each(|&c| present[c] = true);
    let p: Vec<f64> = (0..NUM_CLASSES * 5)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let (_, g) = logreg_objective(&p, x.view(), &y, 0.1, &present);
    check_gradient(
        "logistic",
        &p,
        &g,
        |q| logreg_objective(q, x.view(), &y, 0.1, &present).0,
        probes,
        STEP,
        tol,
        rng,
    )
}

/// A tiny full model without dropout: words, subwords, characters, a DME
/// combiner over two streams and weighted attention.
fn check_model(probes: usize, tol: f64, rng: &mut ChaCha8Rng) -> GradReport {
    let cfg = TrainConfig {
        dropout: 0.0,
        hidden: 3,
        word_dim: 4,
        subword_dim: 3,
        subword_buckets: 64,
        combine: Some(CombineMode::Dme),
        projected_dim: 4,
        attention: AttentionMode::Weighted,
        attention_width: 3,
        ..TrainConfig::default()
    };
    let doc = AnnotatedDocument::new("g", "run ls -la now")
        .with_spans(vec![SegmentSpan::new(1, 3, SegmentLabel::CC)])
        .expect("valid spans");
    let lookup = LookupTable::from_tokens(doc.token_texts(), 4, 1, rng);
    let mut model = SegModel::new(cfg, vec![3, 2], Some(lookup), rng).expect("valid config");
    // Move away from the rounded initialization so every tensor is generic.
    model
        .dense
        .crf
        .visit_mut(&mut |d| d.iter_mut().for_each(|v| *v = StandardNormal.sample(rng)));
    let streams = vec![normal(doc.len(), 3, rng), normal(doc.len(), 2, rng)];
    let batch = [(&doc, Some(streams.clone()))];
    let (_, grads) = model.batch_gradients(&batch, None).expect("gradients");
    let mut work = model.clone();
    check_gradient(
        "model",
        &flatten(&model.dense),
        &flatten(&grads.dense),
        |p| {
            set_from_flat(&mut work.dense, p);
            work.batch_gradients(&batch, None).unwrap().0
        },
        probes,
        STEP,
        tol,
        rng,
    )
}

/// Runs one component's check on a random instance seeded by `seed`.
pub fn gradcheck(component: Component, probes: usize, tolerance: f64, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match component {
        Component::Crf => check_crf(probes, tolerance, &mut rng),
        Component::Gru => check_gru(probes, tolerance, &mut rng),
        Component::Char => check_char(probes, tolerance, &mut rng),
        Component::AttentionWeighted => {
            check_attention(AttentionMode::Weighted, probes, tolerance, &mut rng)
        }
        Component::AttentionUnweighted => {
            check_attention(AttentionMode::Unweighted, probes, tolerance, &mut rng)
        }
        Component::Dme => check_combiner(CombineMode::Dme, probes, tolerance, &mut rng),
        Component::Cdme => check_combiner(CombineMode::Cdme, probes, tolerance, &mut rng),
        Component::Logistic => check_logistic(probes, tolerance, &mut rng),
        Component::Model => check_model(probes, tolerance, &mut rng),
    }
}

pub fn gradcheck_all(probes: usize, tolerance: f64, seed: u64) -> Vec<GradReport> {
    Component::ALL
        .iter()
        .map(|&c| gradcheck(c, probes, tolerance, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in Component::ALL {
            assert_eq!(c.to_string().parse::<Component>().unwrap(), c);
        }
        assert!("lstm".parse::<Component>().is_err());
    }

    #[test]
    fn every_component_passes() {
        for report in gradcheck_all(60, 1e-4, 11) {
            assert!(report.passed, "{}", report.line());
        }
    }
}
