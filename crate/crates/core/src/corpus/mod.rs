//! Question documents, their tokenization and BIO-encoded segment annotations.

mod agreement;
mod bio;
mod io;
mod split;
mod stats;
mod tokenize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::{agreement, cohen_kappa, AgreementReport, AGREEMENT_CLASSES};
pub use bio::{bio_to_spans, spans_to_bio, token_classes};
pub use io::{load_corpus, read_corpus, save_corpus, write_corpus};
pub use split::{split_corpus, Split};
pub use stats::{corpus_stats, CorpusStats};
pub use tokenize::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("spans {first:?} and {second:?} overlap")]
    OverlappingSpans {
        first: SegmentSpan,
        second: SegmentSpan,
    },
    #[error("span {span:?} out of range for {token_count} tokens")]
    IndexOutOfRange {
        span: SegmentSpan,
        token_count: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field \"{field}\"")]
    Schema { field: &'static str, line: usize },
    #[error("line {line}: document {id:?}: {message}")]
    InvalidDocument {
        line: usize,
        id: String,
        message: String,
    },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("documents do not line up: {0}")]
    MismatchedDocuments(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The six non-natural-language segment types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentLabel {
    /// Command or code.
    CC,
    /// Command output.
    CO,
    /// Error message or stack trace.
    ES,
    /// File content.
    FC,
    /// Semi-structured information.
    SS,
    /// Path or URL.
    PU,
}

impl SegmentLabel {
    pub const ALL: [SegmentLabel; 6] = [
        SegmentLabel::CC,
        SegmentLabel::CO,
        SegmentLabel::ES,
        SegmentLabel::FC,
        SegmentLabel::SS,
        SegmentLabel::PU,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentLabel::CC => "CC",
            SegmentLabel::CO => "CO",
            SegmentLabel::ES => "ES",
            SegmentLabel::FC => "FC",
            SegmentLabel::SS => "SS",
            SegmentLabel::PU => "PU",
        }
    }
}

impl fmt::Display for SegmentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown segment label {s:?}"))
    }
}

pub const NUM_TAGS: usize = 13;

/// One of the 13 BIO tags. Index order is
/// `[O, B-CC, I-CC, B-CO, I-CO, B-ES, I-ES, B-FC, I-FC, B-SS, I-SS, B-PU, I-PU]`
/// and is relied upon by decoding tie-breaks and the checkpoint layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BioTag {
    O,
    Begin(SegmentLabel),
    Inside(SegmentLabel),
}

impl BioTag {
    pub fn index(self) -> usize {
        match self {
            BioTag::O => 0,
            BioTag::Begin(l) => 1 + 2 * l.index(),
            BioTag::Inside(l) => 2 + 2 * l.index(),
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(BioTag::O),
            i if i < NUM_TAGS => {
                let label = SegmentLabel::from_index((i - 1) / 2)?;
                Some(if i % 2 == 1 {
                    BioTag::Begin(label)
                } else {
                    BioTag::Inside(label)
                })
            }
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = BioTag> {
        (0..NUM_TAGS).map(|i| BioTag::from_index(i).unwrap())
    }

    pub fn label(self) -> Option<SegmentLabel> {
        match self {
            BioTag::O => None,
            BioTag::Begin(l) | BioTag::Inside(l) => Some(l),
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::O => f.write_str("O"),
            BioTag::Begin(l) => write!(f, "B-{l}"),
            BioTag::Inside(l) => write!(f, "I-{l}"),
        }
    }
}

impl FromStr for BioTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioTag::O);
        }
        match s.split_once('-') {
            Some(("B", l)) => Ok(BioTag::Begin(l.parse()?)),
            Some(("I", l)) => Ok(BioTag::Inside(l.parse()?)),
            _ => Err(format!("unknown BIO tag {s:?}")),
        }
    }
}

/// Kind of whitespace run that precedes a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BreakKind {
    None,
    Space,
    Newline,
}

impl BreakKind {
    pub fn code(self) -> &'static str {
        match self {
            BreakKind::None => "n",
            BreakKind::Space => "s",
            BreakKind::Newline => "nl",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "n" => Some(BreakKind::None),
            "s" => Some(BreakKind::Space),
            "nl" => Some(BreakKind::Newline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub byte_start: usize,
    pub byte_end: usize,
    pub preceding_break: BreakKind,
}

/// Half-open token range `[start, end)` carrying one segment label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentSpan {
    pub start: usize,
    pub end: usize,
    pub label: SegmentLabel,
}

impl SegmentSpan {
    pub fn new(start: usize, end: usize, label: SegmentLabel) -> Self {
        SegmentSpan { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Number of tokens shared with `other`, ignoring labels.
    pub fn intersection(&self, other: &SegmentSpan) -> usize {
        self.end
            .min(other.end)
            .saturating_sub(self.start.max(other.start))
    }
}

/// Checks spans for emptiness, range and pairwise overlap.
pub fn validate_spans(spans: &[SegmentSpan], token_count: usize) -> Result<(), CorpusError> {
    for span in spans {
        if span.start >= span.end || span.end > token_count {
            return Err(CorpusError::IndexOutOfRange {
                span: *span,
                token_count,
            });
        }
    }
    let mut sorted: Vec<SegmentSpan> = spans.to_vec();
    sorted.sort();
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(CorpusError::OverlappingSpans {
                first: pair[0],
                second: pair[1],
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDocument {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub spans: Vec<SegmentSpan>,
}

impl AnnotatedDocument {
    /// Tokenizes `text`; the document starts without spans.
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        AnnotatedDocument {
            id: id.into(),
            text,
            tokens,
            spans: Vec::new(),
        }
    }

    pub fn with_spans(mut self, spans: Vec<SegmentSpan>) -> Result<Self, CorpusError> {
        validate_spans(&spans, self.tokens.len())?;
        self.spans = spans;
        self.spans.sort();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Copy of this document with its spans replaced, e.g. by predictions.
    pub fn relabelled(&self, spans: Vec<SegmentSpan>) -> Result<Self, CorpusError> {
        AnnotatedDocument {
            spans: Vec::new(),
            ..self.clone()
        }
        .with_spans(spans)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_order_is_fixed() {
        let names: Vec<String> = BioTag::all().map(|t| t.to_string()).collect();
        assert_eq!(
            names,
            [
                "O", "B-CC", "I-CC", "B-CO", "I-CO", "B-ES", "I-ES", "B-FC", "I-FC", "B-SS",
                "I-SS", "B-PU", "I-PU"
            ]
        );
        for (i, tag) in BioTag::all().enumerate() {
            assert_eq!(tag.index(), i);
            assert_eq!(tag.to_string().parse::<BioTag>().unwrap(), tag);
        }
        assert_eq!(BioTag::all().count(), 13);
        assert!(BioTag::from_index(13).is_none());
    }

    #[test]
    fn span_validation() {
        use SegmentLabel::*;
        assert!(
            validate_spans(&[SegmentSpan::new(0, 2, CC), SegmentSpan::new(2, 3, CC)], 3).is_ok()
        );
        assert!(matches!(
            validate_spans(&[SegmentSpan::new(0, 2, CC), SegmentSpan::new(1, 3, ES)], 3),
            Err(CorpusError::OverlappingSpans { .. })
        ));
        assert!(matches!(
            validate_spans(&[SegmentSpan::new(2, 4, CC)], 3),
            Err(CorpusError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            validate_spans(&[SegmentSpan::new(2, 2, CC)], 3),
            Err(CorpusError::IndexOutOfRange { .. })
        ));
    }
}
