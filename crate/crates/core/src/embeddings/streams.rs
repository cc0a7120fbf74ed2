//! Externally produced contextual embeddings in the `CSTR1` container.
//!
//! Layout (little-endian): magic `CSTR1`, `u32 n`, `n × u32` widths, then per
//! document `u32 id_len`, id bytes, `u32 token_count`, and for each stream
//! `token_count × width` float32 values in row-major order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::EmbeddingError;
use crate::corpus::AnnotatedDocument;

const MAGIC: &[u8; 5] = b"CSTR1";

/// Per-document token vectors from `n` sources, kept as stored (float32).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextualStreamSet {
    pub dims: Vec<usize>,
    pub docs: BTreeMap<String, Vec<Array2<f32>>>,
}

impl ContextualStreamSet {
    pub fn new(dims: Vec<usize>) -> Self {
        ContextualStreamSet {
            dims,
            docs: BTreeMap::new(),
        }
    }

    pub fn stream_count(&self) -> usize {
        self.dims.len()
    }

    pub fn insert(
        &mut self,
        id: impl Into<String>,
        streams: Vec<Array2<f32>>,
    ) -> Result<(), EmbeddingError> {
        let id = id.into();
        if streams.len() != self.dims.len() {
            return Err(EmbeddingError::StreamCountMismatch {
                expected: self.dims.len(),
                got: streams.len(),
            });
        }
        let tokens = streams.first().map_or(0, |s| s.nrows());
        for (i, (s, &d)) in streams.iter().zip(&self.dims).enumerate() {
            if s.ncols() != d {
                return Err(EmbeddingError::DimMismatch {
                    stream: i,
                    expected: d,
                    got: s.ncols(),
                });
            }
            if s.nrows() != tokens {
                return Err(EmbeddingError::TokenCountMismatch(id));
            }
        }
        self.docs.insert(id, streams);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[Array2<f32>]> {
        self.docs.get(id).map(Vec::as_slice)
    }

    /// The document's streams widened to `f64`.
    pub fn get_f64(&self, id: &str) -> Option<Vec<Array2<f64>>> {
        self.get(id)
            .map(|ss| ss.iter().map(|s| s.mapv(f64::from)).collect())
    }

    /// Keeps only the listed streams, in the given order.
    pub fn select(&self, which: &[usize]) -> ContextualStreamSet {
        ContextualStreamSet {
            dims: which.iter().map(|&i| self.dims[i]).collect(),
            docs: self
                .docs
                .iter()
                .map(|(id, ss)| (id.clone(), which.iter().map(|&i| ss[i].clone()).collect()))
                .collect(),
        }
    }

    /// Fails with `TokenCountMismatch` for any corpus document whose stored
    /// token count differs. Documents absent from the file are not errors here.
    pub fn validate_against(&self, docs: &[AnnotatedDocument]) -> Result<(), EmbeddingError> {
        for doc in docs {
            if let Some(streams) = self.docs.get(&doc.id) {
                if streams.iter().any(|s| s.nrows() != doc.tokens.len()) {
                    return Err(EmbeddingError::TokenCountMismatch(doc.id.clone()));
                }
            }
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, EmbeddingError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> EmbeddingError {
    if e.kind() == ErrorKind::UnexpectedEof {
        EmbeddingError::Format("truncated file".into())
    } else {
        EmbeddingError::Io(e)
    }
}

pub fn read_streams(reader: impl Read) -> Result<ContextualStreamSet, EmbeddingError> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(EmbeddingError::Format("bad magic".into()));
    }
    let n = read_u32(&mut r)? as usize;
    let dims = (0..n)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let mut set = ContextualStreamSet::new(dims.clone());

    loop {
        let mut first = [0u8; 1];
        match r.read(&mut first)? {
            0 => break,
            _ => {}
        }
        let mut rest = [0u8; 3];
        r.read_exact(&mut rest).map_err(truncated)?;
        let id_len = u32::from_le_bytes([first[0], rest[0], rest[1], rest[2]]) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(truncated)?;
        let id =
            String::from_utf8(id).map_err(|_| EmbeddingError::Format("id is not UTF-8".into()))?;
        let tokens = read_u32(&mut r)? as usize;
        let mut streams = Vec::with_capacity(n);
        for &d in &dims {
            let mut bytes = vec![0u8; tokens * d * 4];
            r.read_exact(&mut bytes).map_err(truncated)?;
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            streams.push(Array2::from_shape_vec((tokens, d), values).expect("sized above"));
        }
        if set.docs.contains_key(&id) {
            return Err(EmbeddingError::Format(format!(
                "duplicate document id {id:?}"
            )));
        }
        set.insert(id, streams)?;
    }
    Ok(set)
}

/// Reads a stream file and checks it against the corpus documents.
pub fn load_streams(
    path: impl AsRef<Path>,
    docs: &[AnnotatedDocument],
) -> Result<ContextualStreamSet, EmbeddingError> {
    let set = read_streams(File::open(path)?)?;
    set.validate_against(docs)?;
    Ok(set)
}

pub fn write_streams(set: &ContextualStreamSet, writer: impl Write) -> Result<(), EmbeddingError> {
    let mut w = BufWriter::new(writer);
    w.write_all(MAGIC)?;
    w.write_all(&(set.dims.len() as u32).to_le_bytes())?;
    for &d in &set.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for (id, streams) in &set.docs {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        let tokens = streams.first().map_or(0, |s| s.nrows());
        w.write_all(&(tokens as u32).to_le_bytes())?;
        for s in streams {
            for v in s.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_streams(
    set: &ContextualStreamSet,
    path: impl AsRef<Path>,
) -> Result<(), EmbeddingError> {
    write_streams(set, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dims: &[usize], tokens: usize) -> ContextualStreamSet {
        let mut set = ContextualStreamSet::new(dims.to_vec());
        let streams = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                Array2::from_shape_fn((tokens, d), |(t, k)| {
                    // include values that are not exactly representable in decimal
                    (i as f32 + 1.0) * 0.1 + t as f32 / 3.0 - k as f32 * 1e-7
                })
            })
            .collect();
        set.insert("q1", streams).unwrap();
        set
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let set = sample(&[3, 2], 4);
        let mut buf = Vec::new();
        write_streams(&set, &mut buf).unwrap();
        let back = read_streams(&buf[..]).unwrap();
        assert_eq!(back.dims, set.dims);
        for (a, b) in back.docs["q1"].iter().zip(&set.docs["q1"]) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn accepts_four_large_streams() {
        let set = sample(&[1024, 256, 256, 256], 2);
        let mut buf = Vec::new();
        write_streams(&set, &mut buf).unwrap();
        let back = read_streams(&buf[..]).unwrap();
        assert_eq!(back.dims, vec![1024, 256, 256, 256]);
        assert_eq!(back.docs["q1"][0].dim(), (2, 1024));
    }

    #[test]
    fn token_count_mismatch() {
        let set = sample(&[2], 3);
        let doc = AnnotatedDocument::new("q1", "only two");
        assert!(matches!(
            set.validate_against(&[doc]),
            Err(EmbeddingError::TokenCountMismatch(id)) if id == "q1"
        ));
        let ok = AnnotatedDocument::new("q1", "one two three");
        assert!(set.validate_against(&[ok]).is_ok());
    }

    #[test]
    fn format_errors() {
        assert!(matches!(
            read_streams(&b"CSTR2"[..]),
            Err(EmbeddingError::Format(_))
        ));
        let set = sample(&[2], 3);
        let mut buf = Vec::new();
        write_streams(&set, &mut buf).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(
            read_streams(&buf[..]),
            Err(EmbeddingError::Format(_))
        ));
    }
}
