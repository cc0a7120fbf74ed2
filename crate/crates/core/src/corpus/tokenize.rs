use super::{BreakKind, Token};

/// Splits `text` on whitespace, recording byte offsets and the kind of
/// whitespace run in front of each token. Any run containing a line break
/// counts as a newline break.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut pending = BreakKind::None;
    let mut start: Option<usize> = None;

    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token {
                    text: text[s..i].to_string(),
                    byte_start: s,
                    byte_end: i,
                    preceding_break: pending,
                });
                pending = BreakKind::None;
            }
            if ch == '\n' || ch == '\r' {
                pending = BreakKind::Newline;
            } else if pending == BreakKind::None {
                pending = BreakKind::Space;
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: text[s..].to_string(),
            byte_start: s,
            byte_end: text.len(),
            preceding_break: pending,
        });
    }
    tokens
}
