//! Answer retrieval with a BM25 inverted index, queries split into labelled
//! fields with per-label boosts, and mean reciprocal rank evaluation.

mod boosts;
mod store;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boosts::{estimate_boosts, label_overlaps, BoostProfile, BOOST_MAX, BOOST_MIN};
pub use store::{
    load_answers, load_index, load_qrels, read_answers, read_index, read_qrels, save_index,
    write_answers, write_index,
};

use crate::corpus::{token_classes, AnnotatedDocument, SegmentLabel, SegmentSpan};

pub const K1: f64 = 1.2;
pub const B: f64 = 0.75;
pub const DEFAULT_K: usize = 100;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("no answers left to index")]
    EmptyCorpus,
    #[error("duplicate answer id {0:?}")]
    DuplicateId(String),
    #[error("document {0} is not in the index")]
    UnknownDoc(usize),
    #[error("gold answer {0:?} is not in the index")]
    UnknownGoldId(String),
    #[error("no question has a labelled segment and a known answer")]
    NoLabeledPairs,
    #[error("no questions to evaluate")]
    NoQuestions,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid boost for {label}: {value}")]
    InvalidBoost { label: String, value: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerDoc {
    pub id: String,
    pub text: String,
}

/// Lowercased whitespace-separated terms.
pub fn terms(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// One field of a query: the terms of a labelled span, or of a run of
/// unlabelled tokens (`label = None`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryField {
    pub label: Option<SegmentLabel>,
    pub terms: Vec<String>,
}

/// Splits a question into maximal runs of equally labelled tokens.
pub fn segment_question(doc: &AnnotatedDocument, spans: &[SegmentSpan]) -> Vec<QueryField> {
    let classes = token_classes(spans, doc.len());
    let mut fields: Vec<QueryField> = Vec::new();
    let mut prev = None;
    for (i, tok) in doc.tokens.iter().enumerate() {
        let starts_span = spans.iter().any(|s| s.start == i);
        let label = SegmentLabel::from_index(classes[i]);
        let term = tok.text.to_lowercase();
        match fields.last_mut() {
            Some(f) if prev == Some(label) && !starts_span => f.terms.push(term),
            _ => fields.push(QueryField {
                label,
                terms: vec![term],
            }),
        }
        prev = Some(label);
    }
    fields
}

/// The whole question as one unlabelled field.
pub fn whole_question(doc: &AnnotatedDocument) -> Vec<QueryField> {
    if doc.is_empty() {
        return Vec::new();
    }
    vec![QueryField {
        label: None,
        terms: doc.token_texts().map(str::to_lowercase).collect(),
    }]
}

/// Inverted index over answers. Documents are numbered in ascending id
/// order, so ties in score go to the lexicographically smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldedIndex {
    pub ids: Vec<String>,
    pub lengths: Vec<u32>,
    /// Term → `(doc, term frequency)` sorted by doc.
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
    pub k1: f64,
    pub b: f64,
    avg_len: f64,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub doc: usize,
    pub id: String,
    pub score: f64,
}

impl FieldedIndex {
    /// Indexes every answer with at least `min_len` terms whose id is not in
    /// `exclusions`.
    pub fn build(
        answers: &[AnswerDoc],
        min_len: usize,
        exclusions: &HashSet<String>,
    ) -> Result<Self, RetrievalError> {
        let mut kept: Vec<(&str, Vec<String>)> = answers
            .iter()
            .filter(|a| !exclusions.contains(&a.id))
            .map(|a| (a.id.as_str(), terms(&a.text)))
            .filter(|(_, t)| !t.is_empty() && t.len() >= min_len)
            .collect();
        kept.sort_by(|a, b| a.0.cmp(b.0));
        if let Some(w) = kept.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(RetrievalError::DuplicateId(w[0].0.to_string()));
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut lengths = Vec::with_capacity(kept.len());
        for (doc, (_, toks)) in kept.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for (t, n) in tf {
                postings
                    .entry(t.to_string())
                    .or_default()
                    .push((doc as u32, n));
            }
            lengths.push(toks.len() as u32);
        }
        let ids = kept.into_iter().map(|(id, _)| id.to_string()).collect();
        Self::from_parts(ids, lengths, postings, K1, B)
    }

    pub(crate) fn from_parts(
        ids: Vec<String>,
        lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<(u32, u32)>>,
        k1: f64,
        b: f64,
    ) -> Result<Self, RetrievalError> {
        if ids.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let avg_len = lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / lengths.len() as f64;
        let by_id = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(FieldedIndex {
            ids,
            lengths,
            postings,
            k1,
            b,
            avg_len,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn doc_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_score(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let tf = f64::from(tf);
        let norm = 1.0 - self.b + self.b * f64::from(self.lengths[doc]) / self.avg_len;
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }

    /// BM25 of one document for a bag of query terms (repeated terms count
    /// repeatedly).
    pub fn bm25(&self, query: &[String], doc: usize) -> Result<f64, RetrievalError> {
        if doc >= self.len() {
            return Err(RetrievalError::UnknownDoc(doc));
        }
        let field = [QueryField {
            label: None,
            terms: query.to_vec(),
        }];
        let weights = term_weights(&field, &BoostProfile::uniform());
        let mut score = 0.0;
        for (t, w) in &weights {
            if let Some(list) = self.postings.get(*t) {
                if let Ok(pos) = list.binary_search_by_key(&(doc as u32), |p| p.0) {
                    score += w * self.term_score(self.idf(t), list[pos].1, doc);
                }
            }
        }
        Ok(score)
    }

    /// Top `k` documents for a fielded query. Each field contributes its
    /// boost times its BM25; weights of shared terms are pooled first so
    /// that uniform boosts reproduce the single-field query exactly.
    pub fn search(
        &self,
        fields: &[QueryField],
        boosts: &BoostProfile,
        k: usize,
    ) -> Result<Vec<SearchHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for (t, w) in term_weights(fields, boosts) {
            let Some(list) = self.postings.get(t) else {
                continue;
            };
            let idf = self.idf(t);
            for &(doc, tf) in list {
                *scores.entry(doc as usize).or_default() +=
                    w * self.term_score(idf, tf, doc as usize);
            }
        }
        let mut hits: Vec<(usize, f64)> = scores.into_iter().collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(doc, score)| SearchHit {
                doc,
                id: self.ids[doc].clone(),
                score,
            })
            .collect())
    }
}

/// `w_t = Σ_fields boost(label) · count_field(t)`, in term order.
fn term_weights<'a>(fields: &'a [QueryField], boosts: &BoostProfile) -> BTreeMap<&'a str, f64> {
    let mut counts: BTreeMap<&str, BTreeMap<Option<SegmentLabel>, u32>> = BTreeMap::new();
    for f in fields {
        for t in &f.terms {
            *counts
                .entry(t.as_str())
                .or_default()
                .entry(f.label)
                .or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(t, per)| {
            (
                t,
                per.into_iter()
                    .map(|(l, c)| boosts.get(l) * f64::from(c))
                    .sum(),
            )
        })
        .collect()
}

/// A question, the fields to query with and the id of its correct answer.
#[derive(Debug, Clone)]
pub struct RetrievalQuery {
    pub fields: Vec<QueryField>,
    pub gold: String,
}

/// 1-based rank of the gold answer within the top `k`, if present.
pub fn gold_rank(
    index: &FieldedIndex,
    q: &RetrievalQuery,
    boosts: &BoostProfile,
    k: usize,
) -> Result<Option<usize>, RetrievalError> {
    if index.doc_of(&q.gold).is_none() {
        return Err(RetrievalError::UnknownGoldId(q.gold.clone()));
    }
    let hits = index.search(&q.fields, boosts, k)?;
    Ok(hits.iter().position(|h| h.id == q.gold).map(|p| p + 1))
}

/// Mean reciprocal rank over `queries`, counting a miss in the top `k` as 0.
/// Uniform boosts when `boosts` is `None`. Queries are spread over `jobs`
/// threads; the result does not depend on `jobs`.
pub fn mrr(
    index: &FieldedIndex,
    queries: &[RetrievalQuery],
    boosts: Option<&BoostProfile>,
    k: usize,
    jobs: usize,
) -> Result<f64, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::NoQuestions);
    }
    let uniform = BoostProfile::uniform();
    let boosts = boosts.unwrap_or(&uniform);
    let chunk = queries.len().div_ceil(jobs.max(1));
    let ranks: Vec<Option<usize>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|q| gold_rank(index, q, boosts, k))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("query thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let total: f64 = ranks
        .iter()
        .map(|r| r.map_or(0.0, |r| 1.0 / r as f64))
        .sum();
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SegmentLabel::*;

    fn answers(texts: &[(&str, &str)]) -> Vec<AnswerDoc> {
        texts
            .iter()
            .map(|(id, t)| AnswerDoc {
                id: id.to_string(),
                text: t.to_string(),
            })
            .collect()
    }

    fn fixture() -> FieldedIndex {
        FieldedIndex::build(
            &answers(&[
                ("a", "disk full error"),
                ("b", "disk disk cleanup"),
                ("c", "reboot the machine now"),
            ]),
            0,
            &HashSet::new(),
        )
        .unwrap()
    }

    fn q(text: &str) -> Vec<String> {
        terms(text)
    }

    #[test]
    fn postings_by_hand() {
        let idx = fixture();
        assert_eq!(idx.ids, vec!["a", "b", "c"]);
        assert_eq!(idx.lengths, vec![3, 3, 4]);
        assert_eq!(idx.postings["disk"], vec![(0, 1), (1, 2)]);
        assert_eq!(idx.postings["reboot"], vec![(2, 1)]);
        assert_eq!(idx.postings.len(), 8);
        let again = fixture();
        assert_eq!(idx, again);
    }

    #[test]
    fn bm25_by_hand() {
        let idx = fixture();
        let avg = 10.0 / 3.0;
        let idf_disk = (1.0f64 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5)).ln();
        let tf_part = |tf: f64, len: f64| tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / avg));
        let want_b = idf_disk * tf_part(2.0, 3.0);
        assert!((idx.bm25(&q("disk"), 1).unwrap() - want_b).abs() < 1e-9);
        let idf_now = (1.0f64 + (3.0 - 1.0 + 0.5) / 1.5).ln();
        let want_c = idf_now * tf_part(1.0, 4.0);
        assert!((idx.bm25(&q("now disk"), 2).unwrap() - want_c).abs() < 1e-9);
        assert_eq!(idx.bm25(&q("absent"), 0).unwrap(), 0.0);
        assert!(matches!(
            idx.bm25(&q("disk"), 3),
            Err(RetrievalError::UnknownDoc(3))
        ));
    }

    #[test]
    fn single_document_corpus() {
        let idx = FieldedIndex::build(&answers(&[("x", "alpha")]), 0, &HashSet::new()).unwrap();
        let want = (1.0f64 + 0.5 / 1.5).ln() * 2.2 / (1.0 + 1.2);
        assert!((idx.bm25(&q("alpha"), 0).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn filtering() {
        let docs = answers(&[("a", "one two three"), ("b", "one"), ("c", "one two")]);
        let excl: HashSet<String> = ["c".to_string()].into();
        let idx = FieldedIndex::build(&docs, 2, &excl).unwrap();
        assert_eq!(idx.ids, vec!["a"]);
        assert!(idx
            .postings
            .values()
            .all(|p| p.iter().all(|&(d, _)| d == 0)));
        assert!(matches!(
            FieldedIndex::build(&docs, 10, &HashSet::new()),
            Err(RetrievalError::EmptyCorpus)
        ));
        let dup = answers(&[("a", "x"), ("a", "y")]);
        assert!(matches!(
            FieldedIndex::build(&dup, 0, &HashSet::new()),
            Err(RetrievalError::DuplicateId(_))
        ));
    }

    #[test]
    fn duplicates_score_equally() {
        let idx = FieldedIndex::build(
            &answers(&[("a", "x y z"), ("b", "x y z"), ("c", "w")]),
            0,
            &HashSet::new(),
        )
        .unwrap();
        assert_eq!(
            idx.bm25(&q("x z"), 0).unwrap(),
            idx.bm25(&q("x z"), 1).unwrap()
        );
        let hits = idx
            .search(
                &[QueryField {
                    label: None,
                    terms: q("x"),
                }],
                &BoostProfile::uniform(),
                5,
            )
            .unwrap();
        assert_eq!(
            hits.iter().map(|h| h.id.as_str()).collect::<Vec<_>>(),
            vec!["a", "b"]
        );
    }

    fn question() -> AnnotatedDocument {
        AnnotatedDocument::new("q", "my disk shows error now please")
            .with_spans(vec![SegmentSpan::new(1, 2, CC), SegmentSpan::new(3, 4, ES)])
            .unwrap()
    }

    #[test]
    fn segmentation_of_questions() {
        let doc = question();
        let fields = segment_question(&doc, &doc.spans);
        let labels: Vec<_> = fields.iter().map(|f| f.label).collect();
        assert_eq!(labels, vec![None, Some(CC), None, Some(ES), None]);
        assert_eq!(fields[4].terms, q("now please"));
        let adjacent = AnnotatedDocument::new("q", "a b c")
            .with_spans(vec![SegmentSpan::new(0, 1, CC), SegmentSpan::new(1, 3, CC)])
            .unwrap();
        assert_eq!(segment_question(&adjacent, &adjacent.spans).len(), 2);
    }

    #[test]
    fn uniform_boosts_equal_whole_question() {
        let idx = fixture();
        let doc = question();
        let fielded = idx
            .search(
                &segment_question(&doc, &doc.spans),
                &BoostProfile::uniform(),
                10,
            )
            .unwrap();
        let whole = idx
            .search(&whole_question(&doc), &BoostProfile::uniform(), 10)
            .unwrap();
        assert_eq!(fielded, whole);
        for h in &whole {
            let direct = idx.bm25(&q(&doc.text), h.doc).unwrap();
            assert_eq!(h.score, direct);
        }
    }

    #[test]
    fn huge_boost_promotes_the_only_match() {
        let idx = FieldedIndex::build(
            &answers(&[
                (
                    "a",
                    "a segfault happens when memory is corrupted in some rare case",
                ),
                ("b", "install the package again"),
                ("c", "package install guide"),
            ]),
            0,
            &HashSet::new(),
        )
        .unwrap();
        let doc = AnnotatedDocument::new("q", "install package again gives segfault")
            .with_spans(vec![SegmentSpan::new(4, 5, ES)])
            .unwrap();
        let fields = segment_question(&doc, &doc.spans);
        let plain = idx.search(&fields, &BoostProfile::uniform(), 3).unwrap();
        assert_ne!(plain[0].id, "a");
        let mut boosts = BoostProfile::uniform();
        boosts.set(Some(ES), 1e6);
        assert_eq!(idx.search(&fields, &boosts, 3).unwrap()[0].id, "a");
    }

    #[test]
    fn ranking_matches_exhaustive_scores() {
        let idx = fixture();
        let fields = vec![
            QueryField {
                label: Some(ES),
                terms: q("error disk"),
            },
            QueryField {
                label: None,
                terms: q("reboot now disk"),
            },
        ];
        let mut boosts = BoostProfile::uniform();
        boosts.set(Some(ES), 2.5);
        let mut want: Vec<(usize, f64)> = (0..3)
            .map(|d| {
                let s = 2.5 * idx.bm25(&fields[0].terms, d).unwrap()
                    + idx.bm25(&fields[1].terms, d).unwrap();
                (d, s)
            })
            .collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got = idx.search(&fields, &boosts, 3).unwrap();
        for (h, (d, s)) in got.iter().zip(&want) {
            assert_eq!(h.doc, *d);
            assert!((h.score - s).abs() < 1e-12);
        }
        assert!(matches!(
            idx.search(&fields, &boosts, 0),
            Err(RetrievalError::ZeroK)
        ));
    }

    #[test]
    fn mrr_arithmetic() {
        let idx = fixture();
        let query = |text: &str, gold: &str| RetrievalQuery {
            fields: vec![QueryField {
                label: None,
                terms: q(text),
            }],
            gold: gold.into(),
        };
        let first = [query("reboot", "c"), query("cleanup", "b")];
        assert_eq!(mrr(&idx, &first, None, 10, 1).unwrap(), 1.0);
        let ranks_1_2 = [query("reboot", "c"), query("disk", "a")];
        assert_eq!(mrr(&idx, &ranks_1_2, None, 10, 2).unwrap(), 0.75);
        let never = [query("reboot", "a")];
        assert_eq!(mrr(&idx, &never, None, 10, 1).unwrap(), 0.0);
        assert!(matches!(
            mrr(&idx, &[query("x", "zz")], None, 10, 1),
            Err(RetrievalError::UnknownGoldId(_))
        ));
        assert!(matches!(
            mrr(&idx, &[], None, 10, 1),
            Err(RetrievalError::NoQuestions)
        ));
    }

    proptest! {
        #[test]
        fn scaling_boosts_keeps_ranking(scale in 0.1f64..10.0, es in 0.25f64..4.0, cc in 0.25f64..4.0) {
            let idx = fixture();
            let doc = question();
            let fields = segment_question(&doc, &doc.spans);
            let mut a = BoostProfile::uniform();
            a.set(Some(ES), es);
            a.set(Some(CC), cc);
            let mut b = a.clone();
            for l in BoostProfile::keys() {
                b.set(l, a.get(l) * scale);
            }
            let ra: Vec<usize> = idx.search(&fields, &a, 10).unwrap().iter().map(|h| h.doc).collect();
            let rb: Vec<usize> = idx.search(&fields, &b, 10).unwrap().iter().map(|h| h.doc).collect();
            prop_assert_eq!(ra, rb);
        }
    }
}
