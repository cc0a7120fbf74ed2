use std::collections::{BTreeMap, HashSet};

use serde_json::{Map, Value};

use super::{terms, AnswerDoc, RetrievalError};
use crate::corpus::{token_classes, AnnotatedDocument, SegmentLabel};

pub const BOOST_MIN: f64 = 0.25;
pub const BOOST_MAX: f64 = 4.0;

const SLOTS: usize = 7;

fn slot(label: Option<SegmentLabel>) -> usize {
    label.map_or(SLOTS - 1, SegmentLabel::index)
}

fn slot_name(label: Option<SegmentLabel>) -> &'static str {
    label.map_or("O", SegmentLabel::as_str)
}

/// Query-field weight for each segment label and for unlabelled text.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostProfile {
    weights: [f64; SLOTS],
}

impl Default for BoostProfile {
    fn default() -> Self {
        Self::uniform()
    }
}

impl BoostProfile {
    pub fn uniform() -> Self {
        BoostProfile {
            weights: [1.0; SLOTS],
        }
    }

    /// The six labels followed by `None` for unlabelled text.
    pub fn keys() -> impl Iterator<Item = Option<SegmentLabel>> {
        SegmentLabel::ALL
            .into_iter()
            .map(Some)
            .chain(std::iter::once(None))
    }

    pub fn get(&self, label: Option<SegmentLabel>) -> f64 {
        self.weights[slot(label)]
    }

    pub fn set(&mut self, label: Option<SegmentLabel>, value: f64) {
        self.weights[slot(label)] = value;
    }

    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = Self::keys()
            .map(|l| (slot_name(l).to_string(), Value::from(self.get(l))))
            .collect();
        Value::Object(map)
    }

    /// Parses `{"CC": 1.5, ..., "O": 1.0}`; missing labels default to 1.
    pub fn from_json(value: &Value) -> Result<Self, RetrievalError> {
        let bad = |message: String| RetrievalError::Parse { line: 1, message };
        let obj = value
            .as_object()
            .ok_or_else(|| bad("boosts must be a JSON object".into()))?;
        let mut out = Self::uniform();
        for (k, v) in obj {
            let label = Self::keys()
                .find(|&l| slot_name(l) == k)
                .ok_or_else(|| bad(format!("unknown label {k:?}")))?;
            let w = v
                .as_f64()
                .ok_or_else(|| bad(format!("boost for {k} is not a number")))?;
            if !(w.is_finite() && w > 0.0) {
                return Err(RetrievalError::InvalidBoost {
                    label: k.clone(),
                    value: w,
                });
            }
            out.set(label, w);
        }
        Ok(out)
    }
}

/// Mean over questions of `|terms(segment_l) ∩ terms(answer)| / |terms(segment_l)|`
/// per label, using term sets; `None` for labels no question contains.
pub fn label_overlaps(
    pairs: &[(&AnnotatedDocument, &AnswerDoc)],
) -> BTreeMap<Option<SegmentLabel>, f64> {
    let mut sums: BTreeMap<Option<SegmentLabel>, (f64, usize)> = BTreeMap::new();
    for (question, answer) in pairs {
        let answer_terms: HashSet<String> = terms(&answer.text).into_iter().collect();
        let classes = token_classes(&question.spans, question.len());
        let mut by_label: BTreeMap<Option<SegmentLabel>, HashSet<String>> = BTreeMap::new();
        for (tok, &c) in question.tokens.iter().zip(&classes) {
            by_label
                .entry(SegmentLabel::from_index(c))
                .or_default()
                .insert(tok.text.to_lowercase());
        }
        for (label, set) in by_label {
            let shared = set.iter().filter(|t| answer_terms.contains(*t)).count();
            let e = sums.entry(label).or_default();
            e.0 += shared as f64 / set.len() as f64;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(l, (s, n))| (l, s / n as f64))
        .collect()
}

/// Boosts proportional to each label's mean overlap with the correct
/// answer, normalized to mean 1 over the labels seen and clamped to
/// `[0.25, 4]`. Unseen labels keep boost 1.
pub fn estimate_boosts(
    pairs: &[(&AnnotatedDocument, &AnswerDoc)],
) -> Result<BoostProfile, RetrievalError> {
    let overlaps = label_overlaps(pairs);
    if !overlaps.keys().any(Option::is_some) {
        return Err(RetrievalError::NoLabeledPairs);
    }
    let mean = overlaps.values().sum::<f64>() / overlaps.len() as f64;
    let mut out = BoostProfile::uniform();
    if mean > 0.0 {
        for (&label, &o) in &overlaps {
            out.set(label, (o / mean).clamp(BOOST_MIN, BOOST_MAX));
        }
    }
    Ok(out)
}
