use std::collections::BTreeMap;

use num_rational::Ratio;

use super::{AnnotatedDocument, CorpusError, SegmentLabel};

/// Per-question averages. O gaps are not counted as spans.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub question_count: usize,
    pub avg_words: Ratio<u64>,
    pub avg_spans_total: Ratio<u64>,
    pub avg_spans_per_label: BTreeMap<SegmentLabel, Ratio<u64>>,
}

pub fn corpus_stats(docs: &[AnnotatedDocument]) -> Result<CorpusStats, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = docs.len() as u64;
    let words: u64 = docs.iter().map(|d| d.tokens.len() as u64).sum();
    let mut per_label: BTreeMap<SegmentLabel, u64> =
        SegmentLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for span in docs.iter().flat_map(|d| &d.spans) {
        *per_label.get_mut(&span.label).unwrap() += 1;
    }
    let total: u64 = per_label.values().sum();
    Ok(CorpusStats {
        question_count: docs.len(),
        avg_words: Ratio::new(words, n),
        avg_spans_total: Ratio::new(total, n),
        avg_spans_per_label: per_label
            .into_iter()
            .map(|(l, c)| (l, Ratio::new(c, n)))
            .collect(),
    })
}

pub(crate) fn ratio_f64(r: &Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl CorpusStats {
    pub fn to_json(&self) -> serde_json::Value {
        let per_label: serde_json::Map<String, serde_json::Value> = self
            .avg_spans_per_label
            .iter()
            .map(|(l, r)| (l.to_string(), ratio_f64(r).into()))
            .collect();
        serde_json::json!({
            "question_count": self.question_count,
            "avg_words": ratio_f64(&self.avg_words),
            "avg_spans_total": ratio_f64(&self.avg_spans_total),
            "avg_spans_per_label": per_label,
        })
    }

    /// One row in the layout of the usual dataset statistics table.
    pub fn table_row(&self, name: &str) -> String {
        let mut row = format!(
            "{:<10} {:>6} {:>9.2} {:>6.2}",
            name,
            self.question_count,
            ratio_f64(&self.avg_words),
            ratio_f64(&self.avg_spans_total)
        );
        for l in SegmentLabel::ALL {
            row.push_str(&format!(
                " {:>5.2}",
                ratio_f64(&self.avg_spans_per_label[&l])
            ));
        }
        row
    }

    pub fn table_header() -> String {
        let mut h = format!("{:<10} {:>6} {:>9} {:>6}", "", "#Q", "AvgWords", "Spans");
        for l in SegmentLabel::ALL {
            h.push_str(&format!(" {:>5}", l.as_str()));
        }
        h
    }
}
