//! JSON-lines corpus files.
//!
//! One object per line:
//! `{"id", "text", "tokens": [{"t","s","e","brk"}], "spans": [{"st","et","label"}]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    tokenize, validate_spans, AnnotatedDocument, BreakKind, CorpusError, SegmentSpan, Token,
};

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    t: String,
    s: usize,
    e: usize,
    brk: String,
}

#[derive(Serialize, Deserialize)]
struct SpanRecord {
    st: usize,
    et: usize,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct DocRecord {
    id: String,
    text: String,
    tokens: Vec<TokenRecord>,
    spans: Vec<SpanRecord>,
}

const REQUIRED: [&str; 4] = ["id", "text", "tokens", "spans"];

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<AnnotatedDocument>, CorpusError> {
    read_corpus(File::open(path)?)
}

pub fn read_corpus(reader: impl Read) -> Result<Vec<AnnotatedDocument>, CorpusError> {
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(parse_line(&line, line_no)?);
    }
    Ok(docs)
}

fn parse_line(line: &str, line_no: usize) -> Result<AnnotatedDocument, CorpusError> {
    let parse_err = |message: String| CorpusError::Parse {
        line: line_no,
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".into()))?;
    for field in REQUIRED {
        if !obj.contains_key(field) {
            return Err(CorpusError::Schema {
                field,
                line: line_no,
            });
        }
    }
    let record: DocRecord = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
    let invalid = |message: String| CorpusError::InvalidDocument {
        line: line_no,
        id: record.id.clone(),
        message,
    };

    let mut tokens = Vec::with_capacity(record.tokens.len());
    for t in &record.tokens {
        let preceding_break = BreakKind::from_code(&t.brk)
            .ok_or_else(|| invalid(format!("unknown break kind {:?}", t.brk)))?;
        tokens.push(Token {
            text: t.t.clone(),
            byte_start: t.s,
            byte_end: t.e,
            preceding_break,
        });
    }
    if tokens != tokenize(&record.text) {
        return Err(invalid(
            "tokens do not match whitespace tokenization of text".into(),
        ));
    }

    let mut spans = Vec::with_capacity(record.spans.len());
    for s in &record.spans {
        let label = s.label.parse().map_err(invalid)?;
        spans.push(SegmentSpan::new(s.st, s.et, label));
    }
    validate_spans(&spans, tokens.len()).map_err(|e| invalid(e.to_string()))?;
    spans.sort();

    Ok(AnnotatedDocument {
        id: record.id,
        text: record.text,
        tokens,
        spans,
    })
}

fn to_record(doc: &AnnotatedDocument) -> DocRecord {
    DocRecord {
        id: doc.id.clone(),
        text: doc.text.clone(),
        tokens: doc
            .tokens
            .iter()
            .map(|t| TokenRecord {
                t: t.text.clone(),
                s: t.byte_start,
                e: t.byte_end,
                brk: t.preceding_break.code().to_string(),
            })
            .collect(),
        spans: doc
            .spans
            .iter()
            .map(|s| SpanRecord {
                st: s.start,
                et: s.end,
                label: s.label.to_string(),
            })
            .collect(),
    }
}

pub fn write_corpus(docs: &[AnnotatedDocument], writer: impl Write) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(writer);
    for doc in docs {
        serde_json::to_writer(&mut w, &to_record(doc)).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_corpus(docs: &[AnnotatedDocument], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_corpus(docs, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SegmentLabel;

    fn sample() -> Vec<AnnotatedDocument> {
        vec![
            AnnotatedDocument::new("q1", "I ran\nsudo apt-get update\nE: could not lock")
                .with_spans(vec![
                    SegmentSpan::new(2, 5, SegmentLabel::CC),
                    SegmentSpan::new(5, 9, SegmentLabel::ES),
                ])
                .unwrap(),
            AnnotatedDocument::new("q2", "héllo  wörld"),
            AnnotatedDocument::new("q3", ""),
        ]
    }

    #[test]
    fn round_trip() {
        let docs = sample();
        let mut buf = Vec::new();
        write_corpus(&docs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(!text.contains('\r'));
        assert_eq!(read_corpus(&buf[..]).unwrap(), docs);
    }

    #[test]
    fn empty_file() {
        assert!(read_corpus(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn missing_tokens_is_schema_error() {
        let input = concat!(
            r#"{"id":"a","text":"","tokens":[],"spans":[]}"#,
            "\n",
            r#"{"id":"b","text":"x","spans":[]}"#,
            "\n"
        );
        match read_corpus(input.as_bytes()) {
            Err(CorpusError::Schema { field, line }) => {
                assert_eq!(field, "tokens");
                assert_eq!(line, 2);
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let input = "{\"id\":\"a\",\"text\":\"\",\"tokens\":[],\"spans\":[]}\n{oops\n";
        assert!(matches!(
            read_corpus(input.as_bytes()),
            Err(CorpusError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn rejects_inconsistent_tokens_and_bad_spans() {
        let bad_tok =
            r#"{"id":"a","text":"ab cd","tokens":[{"t":"ab","s":0,"e":2,"brk":"n"}],"spans":[]}"#;
        assert!(matches!(
            read_corpus(bad_tok.as_bytes()),
            Err(CorpusError::InvalidDocument { line: 1, .. })
        ));
        let bad_span = r#"{"id":"a","text":"ab","tokens":[{"t":"ab","s":0,"e":2,"brk":"n"}],"spans":[{"st":0,"et":2,"label":"CC"}]}"#;
        assert!(matches!(
            read_corpus(bad_span.as_bytes()),
            Err(CorpusError::InvalidDocument { .. })
        ));
        let bad_label = r#"{"id":"a","text":"ab","tokens":[{"t":"ab","s":0,"e":2,"brk":"n"}],"spans":[{"st":0,"et":1,"label":"XX"}]}"#;
        assert!(read_corpus(bad_label.as_bytes()).is_err());
    }
}
