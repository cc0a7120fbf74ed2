use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::EmbeddingError;
use crate::nn::round_f32;

pub const UNK_TOKEN: &str = "<unk>";

/// Word vectors indexed by token, with a shared row for unknown tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub vocab: HashMap<String, usize>,
    pub matrix: Array2<f64>,
    pub unk_row: usize,
    pub trainable: bool,
}

pub fn lookup_embed<'a>(table: &'a LookupTable, token: &str) -> ArrayView1<'a, f64> {
    table.matrix.row(table.row(token))
}

impl LookupTable {
    /// Builds a randomly initialised table over tokens seen at least
    /// `min_count` times. Row 0 is the unknown row; the rest follow
    /// descending frequency, ties in lexical order.
    pub fn from_tokens<'a>(
        tokens: impl IntoIterator<Item = &'a str>,
        dim: usize,
        min_count: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut vocab = HashMap::with_capacity(kept.len() + 1);
        vocab.insert(UNK_TOKEN.to_string(), 0);
        for (i, (t, _)) in kept.iter().enumerate() {
            vocab.insert(t.to_string(), i + 1);
        }
        let limit = (3.0 / dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).unwrap();
        let matrix = Array2::from_shape_fn((kept.len() + 1, dim), |_| round_f32(dist.sample(rng)));
        LookupTable {
            vocab,
            matrix,
            unk_row: 0,
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, token: &str) -> usize {
        self.vocab.get(token).copied().unwrap_or(self.unk_row)
    }

    /// Tokens ordered by row index.
    pub fn tokens_by_row(&self) -> Vec<String> {
        let ordered: BTreeMap<usize, &String> = self.vocab.iter().map(|(t, &r)| (r, t)).collect();
        ordered.into_values().cloned().collect()
    }

    /// Rebuilds a table from row-ordered tokens (as written in checkpoints).
    pub fn from_parts(
        tokens: Vec<String>,
        matrix: Array2<f64>,
        unk_row: usize,
        trainable: bool,
    ) -> Self {
        let vocab = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        LookupTable {
            vocab,
            matrix,
            unk_row,
            trainable,
        }
    }

    /// Reads the word2vec text format: a `count dim` header, then one
    /// `token v1 … vd` line per row. A `<unk>` entry becomes the unknown
    /// row; otherwise a zero unknown row is appended.
    pub fn read_text(reader: impl Read) -> Result<Self, EmbeddingError> {
        let mut lines = BufReader::new(reader).lines();
        let bad = |line: usize, message: String| EmbeddingError::TableFormat { line, message };
        let header = lines
            .next()
            .ok_or_else(|| bad(1, "missing header".into()))??;
        let mut parts = header.split_whitespace();
        let mut parse_usize = |what: &str| -> Result<usize, EmbeddingError> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| bad(1, format!("bad {what} in header")))
        };
        let count = parse_usize("count")?;
        let dim = parse_usize("dim")?;
        if dim == 0 {
            return Err(bad(1, "dimension must be positive".into()));
        }

        let mut tokens = Vec::with_capacity(count + 1);
        let mut values = Vec::with_capacity((count + 1) * dim);
        for i in 0..count {
            let line_no = i + 2;
            let line = lines
                .next()
                .ok_or_else(|| bad(line_no, "unexpected end of file".into()))??;
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let token = fields
                .next()
                .ok_or_else(|| bad(line_no, "empty line".into()))?;
            let row: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| bad(line_no, e.to_string())))
                .collect::<Result<_, _>>()?;
            if row.len() != dim {
                return Err(bad(
                    line_no,
                    format!("expected {dim} values, found {}", row.len()),
                ));
            }
            tokens.push(token.to_string());
            values.extend(row);
        }
        let unk_row = match tokens.iter().position(|t| t == UNK_TOKEN) {
            Some(p) => p,
            None => {
                tokens.push(UNK_TOKEN.to_string());
                values.extend(std::iter::repeat_n(0.0, dim));
                tokens.len() - 1
            }
        };
        let matrix = Array2::from_shape_vec((tokens.len(), dim), values).expect("shape checked");
        let mut table = LookupTable::from_parts(tokens, matrix, unk_row, false);
        if table.vocab.len() != table.matrix.nrows() {
            return Err(bad(0, "duplicate tokens".into()));
        }
        table.trainable = false;
        Ok(table)
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::read_text(File::open(path)?)
    }

    pub fn write_text(&self, writer: impl Write) -> Result<(), EmbeddingError> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{} {}", self.matrix.nrows(), self.dim())?;
        for (i, token) in self.tokens_by_row().iter().enumerate() {
            write!(w, "{token}")?;
            for v in self.matrix.row(i) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}
