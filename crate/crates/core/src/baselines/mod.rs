//! Sentence-level baselines: split a question at newlines and sentence
//! ends, mean-pool contextual vectors per unit (optionally with the
//! neighbouring units), and label each unit with multinomial logistic
//! regression.

mod lbfgs;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lbfgs::{minimize, LbfgsResult};

use crate::corpus::{token_classes, AnnotatedDocument, BreakKind, SegmentLabel, SegmentSpan};
use crate::embeddings::ContextualStreamSet;

/// Six segment labels followed by O.
pub const NUM_CLASSES: usize = 7;
pub const O_CLASS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("no contextual streams for document {0:?}")]
    MissingStreams(String),
    #[error("feature width {got} does not match classifier width {expected}")]
    DimMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    /// The unit starts the document or a new line.
    Newline,
    /// The unit follows a sentence-final token.
    SentencePunct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceUnit {
    pub start: usize,
    pub end: usize,
    pub boundary: BoundarySource,
}

fn ends_sentence(token: &str) -> bool {
    token.ends_with(['.', '?', '!'])
}

fn capitalized(token: &str) -> bool {
    token.chars().next().is_some_and(char::is_uppercase)
}

/// Splits before any token that starts a new line, and after a token ending
/// in `.`, `?` or `!` when the next token is capitalized.
pub fn sentence_segment(doc: &AnnotatedDocument) -> Vec<SentenceUnit> {
    let toks = &doc.tokens;
    let mut units = Vec::new();
    let mut start = 0;
    let mut boundary = BoundarySource::Newline;
    for i in 1..toks.len() {
        let why = if toks[i].preceding_break == BreakKind::Newline {
            Some(BoundarySource::Newline)
        } else if ends_sentence(&toks[i - 1].text) && capitalized(&toks[i].text) {
            Some(BoundarySource::SentencePunct)
        } else {
            None
        };
        if let Some(next) = why {
            units.push(SentenceUnit {
                start,
                end: i,
                boundary,
            });
            start = i;
            boundary = next;
        }
    }
    if !toks.is_empty() {
        units.push(SentenceUnit {
            start,
            end: toks.len(),
            boundary,
        });
    }
    units
}

fn mean_rows(vectors: ArrayView2<f64>, unit: &SentenceUnit) -> Array1<f64> {
    vectors
        .slice(s![unit.start..unit.end, ..])
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(vectors.ncols()))
}

/// Mean of the unit's token vectors; with `context`, followed by the means
/// of the previous and next units (zeros at the document edges).
pub fn pool_features(
    vectors: ArrayView2<f64>,
    units: &[SentenceUnit],
    index: usize,
    context: bool,
) -> Array1<f64> {
    let own = mean_rows(vectors, &units[index]);
    if !context {
        return own;
    }
    let zero = Array1::zeros(vectors.ncols());
    let prev = if index > 0 {
        mean_rows(vectors, &units[index - 1])
    } else {
        zero.clone()
    };
    let next = units.get(index + 1).map_or(zero, |u| mean_rows(vectors, u));
    concatenate(Axis(0), &[own.view(), prev.view(), next.view()]).expect("same widths")
}

/// Majority token class inside the unit; ties go to the lower class index.
pub fn unit_label(classes: &[usize], unit: &SentenceUnit) -> usize {
    let mut counts = [0usize; NUM_CLASSES];
    for &c in &classes[unit.start..unit.end] {
        counts[c] += 1;
    }
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

/// Joins adjacent units with the same non-O class into labelled spans.
pub fn units_to_spans(units: &[SentenceUnit], classes: &[usize]) -> Vec<SegmentSpan> {
    let mut spans: Vec<SegmentSpan> = Vec::new();
    for (u, &c) in units.iter().zip(classes) {
        let Some(label) = SegmentLabel::from_index(c) else {
            continue;
        };
        match spans.last_mut() {
            Some(last) if last.label == label && last.end == u.start => last.end = u.end,
            _ => spans.push(SegmentSpan::new(u.start, u.end, label)),
        }
    }
    spans
}

/// Multinomial logistic regression over the seven unit classes. Classes
/// that never occur in training are never predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegClassifier {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub lambda: f64,
    pub present: [bool; NUM_CLASSES],
}

/// Mean cross-entropy plus `λ/2 · ‖W‖²` (bias unpenalized) and its
/// gradient. `params` holds `W` row-major followed by the bias.
pub fn logreg_objective(
    params: &[f64],
    x: ArrayView2<f64>,
    y: &[usize],
    lambda: f64,
    present: &[bool; NUM_CLASSES],
) -> (f64, Vec<f64>) {
    let (n, d) = x.dim();
    let w =
        ArrayView2::from_shape((NUM_CLASSES, d), &params[..NUM_CLASSES * d]).expect("weight block");
    let b = ArrayView1::from(&params[NUM_CLASSES * d..]);
    let mut logits = x.dot(&w.t()) + &b;
    let mut loss = 0.0;
    for (i, mut row) in logits.rows_mut().into_iter().enumerate() {
        let m = (0..NUM_CLASSES)
            .filter(|&k| present[k])
            .map(|k| row[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..NUM_CLASSES)
            .filter(|&k| present[k])
            .map(|k| (row[k] - m).exp())
            .sum();
        loss += m + z.ln() - row[y[i]];
        for k in 0..NUM_CLASSES {
            row[k] = if present[k] {
                (row[k] - m).exp() / z
            } else {
                0.0
            };
        }
        row[y[i]] -= 1.0;
    }
    let inv = 1.0 / n as f64;
    loss = loss * inv + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let gw = logits.t().dot(&x) * inv + &w * lambda;
    let gb = logits.sum_axis(Axis(0)) * inv;
    let mut grad = gw.into_raw_vec_and_offset().0;
    grad.extend(gb.iter());
    (loss, grad)
}

/// Fits the classifier until the gradient norm falls below `1e-6` (or the
/// iteration budget runs out).
pub fn train_logreg(
    x: ArrayView2<f64>,
    y: &[usize],
    lambda: f64,
) -> Result<LogRegClassifier, BaselineError> {
    let (n, d) = x.dim();
    if n == 0 || n != y.len() {
        return Err(BaselineError::DegenerateData(format!(
            "{n} feature rows for {} labels",
            y.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(BaselineError::DegenerateData(
            "lambda must be finite and non-negative".into(),
        ));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= NUM_CLASSES) {
        return Err(BaselineError::DegenerateData(format!(
            "class {bad} out of range"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::DegenerateData("non-finite feature".into()));
    }
    let mut present = [false; NUM_CLASSES];
    for &c in y {
        present[c] = true;
    }
    let x0 = vec![0.0; NUM_CLASSES * (d + 1)];
    let result = minimize(
        |p| logreg_objective(p, x, y, lambda, &present),
        x0,
        1e-6,
        5000,
        10,
    );
    let weights = Array2::from_shape_vec((NUM_CLASSES, d), result.x[..NUM_CLASSES * d].to_vec())
        .expect("weight block");
    let bias = Array1::from(result.x[NUM_CLASSES * d..].to_vec());
    Ok(LogRegClassifier {
        weights,
        bias,
        lambda,
        present,
    })
}

impl LogRegClassifier {
    pub fn flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.weights.iter().copied().collect();
        v.extend(self.bias.iter());
        v
    }

    /// Highest-scoring class among those seen in training; ties go to the
    /// lower index.
    pub fn classify(&self, x: ArrayView1<f64>) -> Result<usize, BaselineError> {
        if x.len() != self.weights.ncols() {
            return Err(BaselineError::DimMismatch {
                expected: self.weights.ncols(),
                got: x.len(),
            });
        }
        let scores = self.weights.dot(&x) + &self.bias;
        let mut best: Option<usize> = None;
        for k in (0..NUM_CLASSES).filter(|&k| self.present[k]) {
            if best.is_none_or(|b| scores[k] > scores[b]) {
                best = Some(k);
            }
        }
        Ok(best.unwrap_or(O_CLASS))
    }
}

/// All streams of a document side by side, `s × Σd_i`.
pub fn doc_vectors(
    set: &ContextualStreamSet,
    doc: &AnnotatedDocument,
) -> Result<Array2<f64>, BaselineError> {
    let streams = set
        .get(&doc.id)
        .ok_or_else(|| BaselineError::MissingStreams(doc.id.clone()))?;
    let views: Vec<_> = streams.iter().map(|m| m.mapv(f64::from)).collect();
    let views: Vec<ArrayView2<f64>> = views.iter().map(|m| m.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("streams share the token count"))
}

/// Sentence units, pooled features and gold unit classes for a corpus.
pub fn unit_dataset(
    docs: &[AnnotatedDocument],
    set: &ContextualStreamSet,
    context: bool,
) -> Result<(Array2<f64>, Vec<usize>), BaselineError> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for doc in docs {
        let vectors = doc_vectors(set, doc)?;
        let units = sentence_segment(doc);
        let classes = token_classes(&doc.spans, doc.len());
        for i in 0..units.len() {
            rows.push(pool_features(vectors.view(), &units, i, context));
            labels.push(unit_label(&classes, &units[i]));
        }
    }
    if rows.is_empty() {
        return Err(BaselineError::DegenerateData("no sentence units".into()));
    }
    let views: Vec<ArrayView1<f64>> = rows.iter().map(|r| r.view()).collect();
    let x = ndarray::stack(Axis(0), &views).expect("uniform widths");
    Ok((x, labels))
}

/// The "sentence only" (`context = false`) and "sentence context"
/// (`context = true`) baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceBaseline {
    pub context: bool,
    pub classifier: LogRegClassifier,
}

impl SentenceBaseline {
    pub fn train(
        docs: &[AnnotatedDocument],
        set: &ContextualStreamSet,
        context: bool,
        lambda: f64,
    ) -> Result<Self, BaselineError> {
        let (x, y) = unit_dataset(docs, set, context)?;
        Ok(SentenceBaseline {
            context,
            classifier: train_logreg(x.view(), &y, lambda)?,
        })
    }

    pub fn predict(
        &self,
        doc: &AnnotatedDocument,
        set: &ContextualStreamSet,
    ) -> Result<Vec<SegmentSpan>, BaselineError> {
        if doc.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = doc_vectors(set, doc)?;
        let units = sentence_segment(doc);
        let classes = (0..units.len())
            .map(|i| {
                self.classifier
                    .classify(pool_features(vectors.view(), &units, i, self.context).view())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(units_to_spans(&units, &classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_spans;
    use crate::nn::check_gradient;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn doc(text: &str) -> AnnotatedDocument {
        AnnotatedDocument::new("d", text)
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(
            sentence_segment(&doc("one line\nsecond line\nthird")).len(),
            3
        );
        assert_eq!(sentence_segment(&doc("one line no punctuation")).len(), 1);
        let units = sentence_segment(&doc("Done. Now run it"));
        assert_eq!(units.len(), 2);
        assert_eq!(units[1].boundary, BoundarySource::SentencePunct);
        assert_eq!((units[1].start, units[1].end), (1, 4));
        assert_eq!(sentence_segment(&doc("see v1.2 now")).len(), 1);
        assert!(sentence_segment(&doc("")).is_empty());
    }

    proptest! {
        #[test]
        fn units_partition_tokens(text in "[a-zA-Z.?! \n]{0,80}") {
            let d = doc(&text);
            let units = sentence_segment(&d);
            let mut pos = 0;
            for u in &units {
                prop_assert_eq!(u.start, pos);
                prop_assert!(u.end > u.start);
                pos = u.end;
            }
            prop_assert_eq!(pos, d.len());
        }
    }

    #[test]
    fn pooling() {
        let v = array![[1.0, 2.0], [1.0, 2.0], [3.0, 5.0], [5.0, 7.0]];
        let units = vec![
            SentenceUnit {
                start: 0,
                end: 2,
                boundary: BoundarySource::Newline,
            },
            SentenceUnit {
                start: 2,
                end: 4,
                boundary: BoundarySource::Newline,
            },
        ];
        assert_eq!(pool_features(v.view(), &units, 0, false), array![1.0, 2.0]);
        let ctx = pool_features(v.view(), &units, 0, true);
        assert_eq!(ctx, array![1.0, 2.0, 0.0, 0.0, 4.0, 6.0]);
        let last = pool_features(v.view(), &units, 1, true);
        assert_eq!(last.slice(s![4..]), array![0.0, 0.0]);
    }

    #[test]
    fn pooling_matches_loop_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = Array2::from_shape_fn((9, 5), |_| StandardNormal.sample(&mut rng));
        let units = vec![SentenceUnit {
            start: 2,
            end: 7,
            boundary: BoundarySource::Newline,
        }];
        let got = pool_features(v.view(), &units, 0, false);
        for k in 0..5 {
            let want: f64 = (2..7).map(|j| v[[j, k]]).sum::<f64>() / 5.0;
            assert!((got[k] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn merge_adjacent_units() {
        let units: Vec<SentenceUnit> = [(0, 2), (2, 3), (3, 5), (5, 6)]
            .iter()
            .map(|&(start, end)| SentenceUnit {
                start,
                end,
                boundary: BoundarySource::Newline,
            })
            .collect();
        let spans = units_to_spans(&units, &[0, 0, O_CLASS, 2]);
        assert_eq!(
            spans,
            vec![
                SegmentSpan::new(0, 3, SegmentLabel::CC),
                SegmentSpan::new(5, 6, SegmentLabel::ES)
            ]
        );
        validate_spans(&spans, 6).unwrap();
        assert_eq!(unit_label(&[6, 2, 2, 6], &units[0]), 2);
        assert_eq!(
            unit_label(
                &[6, 2, 2, 6],
                &SentenceUnit {
                    start: 0,
                    end: 4,
                    boundary: BoundarySource::Newline
                }
            ),
            2
        );
    }

    #[test]
    fn separable_toy_set() {
        let x = array![[2.0, 0.1], [1.5, -0.2], [-2.0, 0.0], [-1.0, 0.3]];
        let y = [0, 0, O_CLASS, O_CLASS];
        let clf = train_logreg(x.view(), &y, 1e-3).unwrap();
        for (row, &label) in x.rows().into_iter().zip(&y) {
            assert_eq!(clf.classify(row).unwrap(), label);
        }
        let (_, g) = logreg_objective(&clf.flat(), x.view(), &y, 1e-3, &clf.present);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
        assert!(matches!(
            clf.classify(array![1.0].view()),
            Err(BaselineError::DimMismatch { .. })
        ));
    }

    #[test]
    fn strong_penalty_predicts_majority() {
        let x = array![[2.0], [1.5], [-2.0], [-1.0], [0.5]];
        let y = [3, 3, 1, 1, 1];
        let clf = train_logreg(x.view(), &y, 1e6).unwrap();
        assert!(clf.weights.iter().all(|w| w.abs() < 1e-5));
        for row in x.rows() {
            assert_eq!(clf.classify(row).unwrap(), 1);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let x = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            train_logreg(x.view(), &[], 1.0),
            Err(BaselineError::DegenerateData(_))
        ));
        let x = Array2::<f64>::zeros((2, 3));
        assert!(train_logreg(x.view(), &[0], 1.0).is_err());
        assert!(train_logreg(x.view(), &[0, 9], 1.0).is_err());
    }

    #[test]
    fn objective_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((12, 4), |_| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..12).map(|i| [0, 2, 5, 6][i % 4]).collect();
        let mut present = [false; NUM_CLASSES];
        y.iter().for_each(|&c| present[c] = true);
        let p: Vec<f64> = (0..NUM_CLASSES * 5)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let (_, g) = logreg_objective(&p, x.view(), &y, 0.1, &present);
        let r = check_gradient(
            "logreg",
            &p,
            &g,
            |q| logreg_objective(q, x.view(), &y, 0.1, &present).0,
            100,
            1e-3,
            1e-4,
            &mut rng,
        );
        assert!(r.passed, "{}", r.line());
    }

    #[test]
    fn optimum_gradient_agrees_with_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((30, 3), |_| StandardNormal.sample(&mut rng));
        let y: Vec<usize> = (0..30)
            .map(|i| {
                if x[[i, 0]] + 0.3 * x[[i, 1]] > 0.0 {
                    4
                } else {
                    6
                }
            })
            .collect();
        let clf = train_logreg(x.view(), &y, 0.05).unwrap();
        let p = clf.flat();
        let (_, g) = logreg_objective(&p, x.view(), &y, 0.05, &clf.present);
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += 1e-3;
            let up = logreg_objective(&q, x.view(), &y, 0.05, &clf.present).0;
            q[i] -= 2e-3;
            let down = logreg_objective(&q, x.view(), &y, 0.05, &clf.present).0;
            assert!(((up - down) / 2e-3 - g[i]).abs() < 1e-4);
        }
    }
}
