//! Proportional-overlap span metrics.
//!
//! A predicted span earns credit for the fraction of it that a same-label
//! gold span covers, and vice versa for recall.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{SegmentLabel, SegmentSpan};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("spans {0:?} and {1:?} overlap within one set")]
    OverlapWithinSet(SegmentSpan, SegmentSpan),
    #[error("gold and prediction lists differ in length ({gold} vs {pred})")]
    DocumentCount { gold: usize, pred: usize },
}

/// `|s ∩ s′| / |s′|` when the labels agree, otherwise 0.
pub fn span_coverage(s: &SegmentSpan, s_prime: &SegmentSpan) -> Ratio<u64> {
    if s.label != s_prime.label || s_prime.is_empty() {
        return Ratio::from_integer(0);
    }
    Ratio::new(s.intersection(s_prime) as u64, s_prime.len() as u64)
}

fn check_set(spans: &[SegmentSpan]) -> Result<(), EvalError> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(EvalError::OverlapWithinSet(w[0], w[1]));
        }
    }
    Ok(())
}

/// Total coverage of the spans in `covered` by the spans in `covering`.
pub fn span_set_coverage(
    covering: &[SegmentSpan],
    covered: &[SegmentSpan],
) -> Result<Ratio<u64>, EvalError> {
    check_set(covering)?;
    check_set(covered)?;
    Ok(coverage_sum(covering, covered))
}

fn coverage_sum(covering: &[SegmentSpan], covered: &[SegmentSpan]) -> Ratio<u64> {
    let mut total = Ratio::from_integer(0);
    for s in covering {
        for t in covered {
            total += span_coverage(s, t);
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold_spans: usize,
    pub pred_spans: usize,
}

impl Scores {
    pub fn from_pr(precision: f64, recall: f64, gold_spans: usize, pred_spans: usize) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores {
            precision,
            recall,
            f1,
            gold_spans,
            pred_spans,
        }
    }
}

/// Pooled coverage sums for a group of documents.
#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    pred_covered: f64,
    gold_covered: f64,
    gold: usize,
    pred: usize,
}

impl Tally {
    fn add(&mut self, gold: &[SegmentSpan], pred: &[SegmentSpan]) {
        self.pred_covered += ratio_f64(coverage_sum(gold, pred));
        self.gold_covered += ratio_f64(coverage_sum(pred, gold));
        self.gold += gold.len();
        self.pred += pred.len();
    }

    fn precision(&self) -> f64 {
        if self.pred == 0 {
            1.0
        } else {
            self.pred_covered / self.pred as f64
        }
    }

    fn recall(&self) -> f64 {
        if self.gold == 0 {
            1.0
        } else {
            self.gold_covered / self.gold as f64
        }
    }

    fn scores(&self) -> Scores {
        Scores::from_pr(self.precision(), self.recall(), self.gold, self.pred)
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Soft precision and recall for one pair of span sets. An empty prediction
/// set has precision 1; an empty gold set has recall 1.
pub fn soft_pr(gold: &[SegmentSpan], pred: &[SegmentSpan]) -> Result<Scores, EvalError> {
    check_set(gold)?;
    check_set(pred)?;
    let mut t = Tally::default();
    t.add(gold, pred);
    Ok(t.scores())
}

/// Exact-match precision and recall: a span counts only if an identical
/// span (same bounds and label) exists in the other set.
pub fn exact_pr(gold: &[SegmentSpan], pred: &[SegmentSpan]) -> Scores {
    let hits = pred.iter().filter(|p| gold.contains(p)).count() as f64;
    let p = if pred.is_empty() {
        1.0
    } else {
        hits / pred.len() as f64
    };
    let r = if gold.is_empty() {
        1.0
    } else {
        hits / gold.len() as f64
    };
    Scores::from_pr(p, r, gold.len(), pred.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Pool spans over all documents before dividing.
    #[default]
    Micro,
    /// Average per-document precision and recall.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub micro: Scores,
    pub per_label: BTreeMap<SegmentLabel, Scores>,
}

fn only(spans: &[SegmentSpan], label: SegmentLabel) -> Vec<SegmentSpan> {
    spans.iter().copied().filter(|s| s.label == label).collect()
}

fn average(tallies: &[Tally], gold: usize, pred: usize) -> Scores {
    if tallies.is_empty() {
        return Scores::from_pr(1.0, 1.0, 0, 0);
    }
    let n = tallies.len() as f64;
    let p = tallies.iter().map(Tally::precision).sum::<f64>() / n;
    let r = tallies.iter().map(Tally::recall).sum::<f64>() / n;
    Scores::from_pr(p, r, gold, pred)
}

/// Scores a list of (gold, predicted) span sets, one pair per document.
pub fn evaluate(
    pairs: &[(Vec<SegmentSpan>, Vec<SegmentSpan>)],
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    for (g, p) in pairs {
        check_set(g)?;
        check_set(p)?;
    }
    let summarize = |select: &dyn Fn(&[SegmentSpan]) -> Vec<SegmentSpan>| {
        let tallies: Vec<Tally> = pairs
            .iter()
            .map(|(g, p)| {
                let mut t = Tally::default();
                t.add(&select(g), &select(p));
                t
            })
            .collect();
        let mut pooled = Tally::default();
        for t in &tallies {
            pooled.pred_covered += t.pred_covered;
            pooled.gold_covered += t.gold_covered;
            pooled.gold += t.gold;
            pooled.pred += t.pred;
        }
        match averaging {
            Averaging::Micro => pooled.scores(),
            Averaging::Macro => average(&tallies, pooled.gold, pooled.pred),
        }
    };
    let micro = summarize(&|s| s.to_vec());
    let per_label = SegmentLabel::ALL
        .iter()
        .map(|&l| (l, summarize(&move |s| only(s, l))))
        .collect();
    Ok(EvalReport { micro, per_label })
}

/// Convenience wrapper pairing gold and predicted documents by position.
pub fn evaluate_documents(
    gold: &[Vec<SegmentSpan>],
    pred: &[Vec<SegmentSpan>],
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::DocumentCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let pairs: Vec<_> = gold.iter().cloned().zip(pred.iter().cloned()).collect();
    evaluate(&pairs, averaging)
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        let per_label: serde_json::Map<String, serde_json::Value> = self
            .per_label
            .iter()
            .map(|(l, s)| {
                (
                    l.to_string(),
                    serde_json::to_value(s).expect("scores serialize"),
                )
            })
            .collect();
        serde_json::json!({ "micro": self.micro, "per_label": per_label })
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>9} {:>9} {:>9} {:>6} {:>6}",
            "label", "P", "R", "F1", "gold", "pred"
        );
        let mut row = |name: &str, s: &Scores| {
            let _ = writeln!(
                out,
                "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6}",
                name, s.precision, s.recall, s.f1, s.gold_spans, s.pred_spans
            );
        };
        for (l, s) in &self.per_label {
            row(l.as_str(), s);
        }
        row("micro", &self.micro);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SegmentLabel::*;

    fn sp(start: usize, end: usize, label: SegmentLabel) -> SegmentSpan {
        SegmentSpan::new(start, end, label)
    }

    #[test]
    fn coverage_cases() {
        assert_eq!(
            span_coverage(&sp(0, 10, ES), &sp(0, 5, ES)),
            Ratio::from_integer(1)
        );
        assert_eq!(
            span_coverage(&sp(0, 10, ES), &sp(0, 5, CO)),
            Ratio::from_integer(0)
        );
        assert_eq!(
            span_coverage(&sp(0, 5, ES), &sp(0, 10, ES)),
            Ratio::new(1, 2)
        );
    }

    #[test]
    fn set_coverage_cases() {
        let set = vec![sp(0, 3, CC), sp(4, 9, PU), sp(9, 12, CC)];
        assert_eq!(
            span_set_coverage(&set, &set).unwrap(),
            Ratio::from_integer(3)
        );
        let other = vec![sp(0, 3, FC)];
        assert_eq!(
            span_set_coverage(&set, &other).unwrap(),
            Ratio::from_integer(0)
        );
        let s = vec![sp(0, 10, ES)];
        let s2 = vec![sp(0, 5, ES), sp(5, 10, CO)];
        assert_eq!(span_set_coverage(&s, &s2).unwrap(), Ratio::from_integer(1));
        let bad = vec![sp(0, 5, ES), sp(3, 6, CO)];
        assert!(matches!(
            span_set_coverage(&bad, &s),
            Err(EvalError::OverlapWithinSet(..))
        ));
    }

    #[test]
    fn worked_example() {
        let gold = vec![sp(0, 10, ES)];
        let pred = vec![sp(0, 5, ES), sp(5, 10, CO)];
        let s = soft_pr(&gold, &pred).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        let same = soft_pr(&gold, &gold).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_conventions() {
        let gold = vec![sp(0, 10, ES)];
        let s = soft_pr(&gold, &[]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 0.0, 0.0));
        let s = soft_pr(&[], &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 1.0, 0.0));
        let s = soft_pr(&[], &[]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn micro_pools_and_macro_averages() {
        let pairs = vec![
            (vec![sp(0, 4, CC)], vec![sp(0, 4, CC)]),
            (
                vec![sp(0, 4, CC), sp(5, 6, PU), sp(7, 8, PU)],
                vec![sp(0, 2, CO)],
            ),
        ];
        let micro = evaluate(&pairs, Averaging::Micro).unwrap();
        assert_eq!(micro.micro.precision, 0.5);
        assert_eq!(micro.micro.recall, 0.25);
        let mac = evaluate(&pairs, Averaging::Macro).unwrap();
        assert_eq!(mac.micro.precision, 0.5);
        assert_eq!(mac.micro.recall, 0.5);
        assert_eq!(micro.per_label[&PU].recall, 0.0);
        assert_eq!(micro.per_label[&PU].precision, 1.0);
        assert_eq!(micro.per_label[&CC].precision, 1.0);
        let json = micro.to_json();
        assert!(json["micro"]["f1"].is_number());
        assert!(json["per_label"]["ES"].is_object());
        assert!(micro.table().contains("micro"));
    }

    #[test]
    fn document_count_mismatch() {
        assert!(matches!(
            evaluate_documents(&[vec![]], &[], Averaging::Micro),
            Err(EvalError::DocumentCount { gold: 1, pred: 0 })
        ));
    }

    fn span_set(max_len: usize) -> impl Strategy<Value = Vec<SegmentSpan>> {
        prop::collection::vec((0usize..3, 1usize..6, 0usize..6), 0..6).prop_map(move |parts| {
            let mut pos = 0;
            let mut out = vec![];
            for (gap, len, label) in parts {
                let start = pos + gap;
                let end = start + len;
                if end > max_len {
                    break;
                }
                out.push(sp(start, end, SegmentLabel::from_index(label).unwrap()));
                pos = end;
            }
            out
        })
    }

    proptest! {
        #[test]
        fn symmetry_and_bounds(a in span_set(40), b in span_set(40)) {
            let ab = soft_pr(&a, &b).unwrap();
            let ba = soft_pr(&b, &a).unwrap();
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
            for v in [ab.precision, ab.recall, ab.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let exact = exact_pr(&a, &b);
            prop_assert!(exact.precision <= ab.precision + 1e-12);
        }

        #[test]
        fn order_invariant(a in span_set(40), b in span_set(40)) {
            let mut ra = a.clone();
            ra.reverse();
            let mut rb = b.clone();
            rb.reverse();
            prop_assert_eq!(soft_pr(&a, &b).unwrap(), soft_pr(&ra, &rb).unwrap());
        }
    }
}
