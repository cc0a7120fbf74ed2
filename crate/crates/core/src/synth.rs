//! Seeded synthetic data: a segmentation corpus with label-specific
//! vocabularies, a task whose labels are only visible through three
//! contextual streams, and a question/answer retrieval collection.

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{AnnotatedDocument, SegmentLabel, SegmentSpan};
use crate::embeddings::ContextualStreamSet;
use crate::retrieval::AnswerDoc;

const WORDS: [&str; 64] = [
    "i",
    "am",
    "trying",
    "to",
    "get",
    "this",
    "working",
    "but",
    "it",
    "keeps",
    "failing",
    "when",
    "run",
    "the",
    "script",
    "on",
    "my",
    "machine",
    "after",
    "update",
    "what",
    "should",
    "do",
    "here",
    "is",
    "output",
    "any",
    "idea",
    "why",
    "happens",
    "with",
    "new",
    "version",
    "please",
    "help",
    "thanks",
    "in",
    "advance",
    "also",
    "tried",
    "reinstalling",
    "package",
    "and",
    "rebooting",
    "nothing",
    "changed",
    "so",
    "far",
    "a",
    "server",
    "ubuntu",
    "system",
    "file",
    "from",
    "then",
    "again",
    "same",
    "problem",
    "every",
    "time",
    "start",
    "service",
    "can",
    "someone",
];

/// Token shape for each label: `cmd_17`, `out_3`, `err_42`, ...
pub fn label_token(label: SegmentLabel, i: usize) -> String {
    match label {
        SegmentLabel::CC => format!("cmd_{i}"),
        SegmentLabel::CO => format!("out_{i}"),
        SegmentLabel::ES => format!("err_{i}"),
        SegmentLabel::FC => format!("cfg_{i}"),
        SegmentLabel::SS => format!("key_{i}=v"),
        SegmentLabel::PU => format!("/srv/p{i}"),
    }
}

struct Builder {
    text: String,
    count: usize,
    spans: Vec<SegmentSpan>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            text: String::new(),
            count: 0,
            spans: Vec::new(),
        }
    }

    fn push(&mut self, token: &str, newline: bool) {
        if self.count > 0 {
            self.text.push(if newline { '\n' } else { ' ' });
        }
        self.text.push_str(token);
        self.count += 1;
    }

    fn segment(&mut self, label: SegmentLabel, tokens: &[String], newline: bool) {
        let start = self.count;
        for (i, t) in tokens.iter().enumerate() {
            self.push(t, newline && i == 0);
        }
        self.spans.push(SegmentSpan::new(start, self.count, label));
    }

    fn finish(self, id: String) -> AnnotatedDocument {
        let doc = AnnotatedDocument::new(id, self.text);
        debug_assert_eq!(doc.len(), self.count);
        doc.with_spans(self.spans)
            .expect("generated spans are valid")
    }
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| WORDS.choose(rng).unwrap().to_string())
        .collect()
}

/// Documents of plain words interleaved with labelled segments, each drawn
/// from that label's own vocabulary of `pool` tokens. Lengths are uniform in
/// `[mean/2, 3·mean/2]`; segments are always separated by plain words.
pub fn segmentation_corpus(
    docs: usize,
    mean_tokens: usize,
    pool: usize,
    seed: u64,
) -> Vec<AnnotatedDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs)
        .map(|d| {
            let target = rng
                .random_range(mean_tokens / 2..=mean_tokens * 3 / 2)
                .max(4);
            let mut b = Builder::new();
            while b.count + 3 < target {
                let n = rng.random_range(2..=6);
                for w in words(&mut rng, n) {
                    b.push(&w, false);
                }
                if b.count + 3 < target && rng.random_bool(0.75) {
                    let label = *SegmentLabel::ALL.choose(&mut rng).unwrap();
                    let len = rng.random_range(1..=8).min(target - b.count - 2).max(1);
                    let toks: Vec<String> = (0..len)
                        .map(|_| label_token(label, rng.random_range(0..pool)))
                        .collect();
                    b.segment(label, &toks, rng.random_bool(0.5));
                }
            }
            for w in words(&mut rng, 2) {
                b.push(&w, false);
            }
            b.finish(format!("syn{d:04}"))
        })
        .collect()
}

/// Width of each planted stream.
pub const STREAM_DIM: usize = 6;

/// Labels whose positions stream `j` reveals.
pub fn stream_labels(j: usize) -> [SegmentLabel; 2] {
    [SegmentLabel::ALL[2 * j], SegmentLabel::ALL[2 * j + 1]]
}

/// Documents whose tokens all come from the plain-word vocabulary, with
/// three streams. Stream `j` carries begin/inside indicators for labels
/// `2j` and `2j+1` plus Gaussian noise, so no single stream sees every
/// label.
pub fn stream_task(
    docs: usize,
    mean_tokens: usize,
    noise: f64,
    seed: u64,
) -> (Vec<AnnotatedDocument>, ContextualStreamSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).expect("finite noise");
    let mut set = ContextualStreamSet::new(vec![STREAM_DIM; 3]);
    let mut out = Vec::with_capacity(docs);
    for d in 0..docs {
        let target = rng
            .random_range(mean_tokens / 2..=mean_tokens * 3 / 2)
            .max(4);
        let mut b = Builder::new();
        while b.count + 3 < target {
            let n = rng.random_range(2..=5);
            for w in words(&mut rng, n) {
                b.push(&w, false);
            }
            if b.count + 3 < target {
                let label = *SegmentLabel::ALL.choose(&mut rng).unwrap();
                let len = rng.random_range(1..=6).min(target - b.count - 2).max(1);
                b.segment(label, &words(&mut rng, len), false);
            }
        }
        for w in words(&mut rng, 2) {
            b.push(&w, false);
        }
        let doc = b.finish(format!("str{d:04}"));
        let streams: Vec<Array2<f32>> = (0..3)
            .map(|j| {
                let mut m = Array2::from_shape_fn((doc.len(), STREAM_DIM), |_| {
                    normal.sample(&mut rng) as f32
                });
                for span in &doc.spans {
                    if let Some(k) = stream_labels(j).iter().position(|&l| l == span.label) {
                        m[[span.start, 2 * k]] += 1.0;
                        for t in span.start + 1..span.end {
                            m[[t, 2 * k + 1]] += 1.0;
                        }
                    }
                }
                m
            })
            .collect();
        set.insert(doc.id.clone(), streams)
            .expect("consistent widths");
        out.push(doc);
    }
    (out, set)
}

/// Questions, answers and the id of each question's correct answer.
#[derive(Debug, Clone)]
pub struct RetrievalSet {
    pub answers: Vec<AnswerDoc>,
    pub questions: Vec<AnnotatedDocument>,
    pub qrels: Vec<(String, String)>,
}

/// `n_answers` answers, each owning a few error terms and commands, and
/// `n_questions` questions built from their answer's error terms (an ES
/// segment), the commands of some other answer (a CC segment) and plain
/// words, only some of which occur in the answer.
pub fn retrieval_set(n_answers: usize, n_questions: usize, seed: u64) -> RetrievalSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let err_terms: Vec<Vec<String>> = (0..n_answers)
        .map(|a| {
            (0..4)
                .map(|k| label_token(SegmentLabel::ES, a * 4 + k))
                .collect()
        })
        .collect();
    let answer_words: Vec<Vec<String>> = (0..n_answers).map(|_| words(&mut rng, 20)).collect();
    let commands: Vec<Vec<String>> = (0..n_answers)
        .map(|_| {
            (0..3)
                .map(|_| label_token(SegmentLabel::CC, rng.random_range(0..n_answers)))
                .collect()
        })
        .collect();
    let answers = (0..n_answers)
        .map(|a| {
            let mut toks = answer_words[a].clone();
            toks.extend(err_terms[a].iter().cloned());
            toks.extend(commands[a].iter().cloned());
            AnswerDoc {
                id: format!("ans{a:04}"),
                text: toks.join(" "),
            }
        })
        .collect();
    let mut questions = Vec::with_capacity(n_questions);
    let mut qrels = Vec::with_capacity(n_questions);
    for q in 0..n_questions {
        let gold = rng.random_range(0..n_answers);
        let mut b = Builder::new();
        let mut plain = words(&mut rng, 6);
        plain.extend(answer_words[gold].choose_multiple(&mut rng, 2).cloned());
        for w in &plain[..4] {
            b.push(w, false);
        }
        let mut errs: Vec<String> = err_terms[gold]
            .choose_multiple(&mut rng, 2)
            .cloned()
            .collect();
        errs.push(label_token(
            SegmentLabel::ES,
            rng.random_range(0..n_answers * 4),
        ));
        b.segment(SegmentLabel::ES, &errs, true);
        for w in &plain[4..] {
            b.push(w, false);
        }
        let other = (gold + rng.random_range(1..n_answers.max(2))) % n_answers;
        b.segment(SegmentLabel::CC, &commands[other], true);
        b.push("thanks", false);
        let id = format!("q{q:04}");
        qrels.push((id.clone(), format!("ans{gold:04}")));
        questions.push(b.finish(id));
    }
    RetrievalSet {
        answers,
        questions,
        qrels,
    }
}
