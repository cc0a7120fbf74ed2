use super::{validate_spans, AnnotatedDocument, BioTag, CorpusError, SegmentLabel, SegmentSpan};

/// Encodes a document's spans as one BIO tag per token.
pub fn spans_to_bio(doc: &AnnotatedDocument) -> Result<Vec<BioTag>, CorpusError> {
    encode(&doc.spans, doc.tokens.len())
}

pub(crate) fn encode(
    spans: &[SegmentSpan],
    token_count: usize,
) -> Result<Vec<BioTag>, CorpusError> {
    validate_spans(spans, token_count)?;
    let mut tags = vec![BioTag::O; token_count];
    for span in spans {
        tags[span.start] = BioTag::Begin(span.label);
        for tag in &mut tags[span.start + 1..span.end] {
            *tag = BioTag::Inside(span.label);
        }
    }
    Ok(tags)
}

/// Decodes a tag sequence into spans. Accepts ill-formed input: an `I-X`
/// that does not continue an `X` span opens a new span, as if it were `B-X`.
pub fn bio_to_spans(tags: &[BioTag]) -> Vec<SegmentSpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, SegmentLabel)> = None;

    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            BioTag::O => {
                if let Some((start, label)) = open.take() {
                    spans.push(SegmentSpan::new(start, i, label));
                }
            }
            BioTag::Begin(label) => {
                if let Some((start, prev)) = open.take() {
                    spans.push(SegmentSpan::new(start, i, prev));
                }
                open = Some((i, label));
            }
            BioTag::Inside(label) => match open {
                Some((_, prev)) if prev == label => {}
                _ => {
                    if let Some((start, prev)) = open.take() {
                        spans.push(SegmentSpan::new(start, i, prev));
                    }
                    open = Some((i, label));
                }
            },
        }
    }
    if let Some((start, label)) = open {
        spans.push(SegmentSpan::new(start, tags.len(), label));
    }
    spans
}

/// Per-token class index in `0..7`: label index for covered tokens, 6 for O.
pub fn token_classes(spans: &[SegmentSpan], token_count: usize) -> Vec<usize> {
    let mut classes = vec![SegmentLabel::ALL.len(); token_count];
    for span in spans {
        for c in &mut classes[span.start..span.end.min(token_count)] {
            *c = span.label.index();
        }
    }
    classes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SegmentLabel::*;

    fn doc_with(n: usize, spans: Vec<SegmentSpan>) -> AnnotatedDocument {
        let text = vec!["w"; n].join(" ");
        AnnotatedDocument::new("d", text).with_spans(spans).unwrap()
    }

    #[test]
    fn encode_examples() {
        let d = doc_with(5, vec![SegmentSpan::new(1, 3, ES)]);
        assert_eq!(
            spans_to_bio(&d).unwrap(),
            vec![
                BioTag::O,
                BioTag::Begin(ES),
                BioTag::Inside(ES),
                BioTag::O,
                BioTag::O
            ]
        );
        assert_eq!(
            spans_to_bio(&doc_with(3, vec![])).unwrap(),
            vec![BioTag::O; 3]
        );
        let d = doc_with(
            3,
            vec![SegmentSpan::new(0, 2, CC), SegmentSpan::new(2, 3, CC)],
        );
        assert_eq!(
            spans_to_bio(&d).unwrap(),
            vec![BioTag::Begin(CC), BioTag::Inside(CC), BioTag::Begin(CC)]
        );
    }

    #[test]
    fn encode_errors() {
        let mut d = doc_with(4, vec![]);
        d.spans = vec![SegmentSpan::new(0, 2, CC), SegmentSpan::new(1, 3, CO)];
        assert!(matches!(
            spans_to_bio(&d),
            Err(CorpusError::OverlappingSpans { .. })
        ));
        d.spans = vec![SegmentSpan::new(3, 5, CC)];
        assert!(matches!(
            spans_to_bio(&d),
            Err(CorpusError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn decode_examples() {
        use BioTag::*;
        assert_eq!(
            bio_to_spans(&[O, Begin(ES), Inside(ES), O]),
            vec![SegmentSpan::new(1, 3, ES)]
        );
        assert_eq!(
            bio_to_spans(&[Inside(CO), Inside(CO)]),
            vec![SegmentSpan::new(0, 2, CO)]
        );
        assert_eq!(
            bio_to_spans(&[Begin(CC), Inside(ES)]),
            vec![SegmentSpan::new(0, 1, CC), SegmentSpan::new(1, 2, ES)]
        );
        assert!(bio_to_spans(&[]).is_empty());
    }

    fn arb_spans() -> impl Strategy<Value = (usize, Vec<SegmentSpan>)> {
        prop::collection::vec((0usize..4, 1usize..5, 0usize..6), 0..8).prop_map(|parts| {
            let mut spans = Vec::new();
            let mut pos = 0;
            for (gap, len, label) in parts {
                pos += gap;
                spans.push(SegmentSpan::new(pos, pos + len, SegmentLabel::ALL[label]));
                pos += len;
            }
            (pos + 1, spans)
        })
    }

    fn arb_tags() -> impl Strategy<Value = Vec<BioTag>> {
        prop::collection::vec(
            (0usize..13).prop_map(|i| BioTag::from_index(i).unwrap()),
            0..30,
        )
    }

    proptest! {
        #[test]
        fn spans_round_trip((n, spans) in arb_spans()) {
            let tags = encode(&spans, n).unwrap();
            prop_assert_eq!(bio_to_spans(&tags), spans);
        }

        #[test]
        fn tags_round_trip_after_repair(tags in arb_tags()) {
            let spans = bio_to_spans(&tags);
            let repaired = encode(&spans, tags.len()).unwrap();
            // Repair only rewrites stray I-X into B-X.
            for (orig, rep) in tags.iter().zip(&repaired) {
                match (orig, rep) {
                    (a, b) if a == b => {}
                    (BioTag::Inside(x), BioTag::Begin(y)) => prop_assert_eq!(x, y),
                    other => prop_assert!(false, "unexpected rewrite {:?}", other),
                }
            }
            prop_assert_eq!(bio_to_spans(&repaired), spans);
            prop_assert_eq!(encode(&bio_to_spans(&repaired), tags.len()).unwrap(), repaired);
        }
    }
}
