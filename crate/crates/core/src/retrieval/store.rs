//! Index files (`SIDX`, version 1, little-endian), answer JSON lines and
//! question/answer relevance TSV.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AnswerDoc, FieldedIndex, RetrievalError};

const MAGIC: &[u8; 4] = b"SIDX";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub fn write_index(index: &FieldedIndex, mut w: impl Write) -> Result<(), RetrievalError> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    w.write_all(&index.k1.to_le_bytes())?;
    w.write_all(&index.b.to_le_bytes())?;
    put_u32(&mut w, index.ids.len() as u32)?;
    for (id, &len) in index.ids.iter().zip(&index.lengths) {
        put_str(&mut w, id)?;
        put_u32(&mut w, len)?;
    }
    put_u32(&mut w, index.postings.len() as u32)?;
    for (term, list) in &index.postings {
        put_str(&mut w, term)?;
        put_u32(&mut w, list.len() as u32)?;
        for &(doc, tf) in list {
            put_u32(&mut w, doc)?;
            put_u32(&mut w, tf)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_index(index: &FieldedIndex, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
    write_index(index, BufWriter::new(File::create(path)?))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], RetrievalError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| RetrievalError::Format("unexpected end of file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, RetrievalError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, RetrievalError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String, RetrievalError> {
        let n = self.u32()? as usize;
        let mut buf = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(RetrievalError::Format("unexpected end of file".into()));
        }
        String::from_utf8(buf).map_err(|_| RetrievalError::Format("string is not UTF-8".into()))
    }
}

pub fn read_index(r: impl Read) -> Result<FieldedIndex, RetrievalError> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != MAGIC {
        return Err(RetrievalError::Format("not an index file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RetrievalError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let k1 = r.f64()?;
    let b = r.f64()?;
    let n = r.u32()? as usize;
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    let mut lengths = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        ids.push(r.string()?);
        lengths.push(r.u32()?);
    }
    let terms = r.u32()?;
    let mut postings = BTreeMap::new();
    let mut counted = vec![0u64; n];
    for _ in 0..terms {
        let term = r.string()?;
        let m = r.u32()?;
        let mut list = Vec::with_capacity((m as usize).min(n));
        for _ in 0..m {
            let doc = r.u32()?;
            let tf = r.u32()?;
            if doc as usize >= n || list.last().is_some_and(|&(d, _)| d >= doc) {
                return Err(RetrievalError::Format(format!(
                    "bad posting list for {term:?}"
                )));
            }
            counted[doc as usize] += u64::from(tf);
            list.push((doc, tf));
        }
        postings.insert(term, list);
    }
    if counted
        .iter()
        .zip(&lengths)
        .any(|(&c, &l)| c != u64::from(l))
    {
        return Err(RetrievalError::Format(
            "document lengths disagree with postings".into(),
        ));
    }
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(RetrievalError::Format("trailing bytes".into()));
    }
    FieldedIndex::from_parts(ids, lengths, postings, k1, b)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<FieldedIndex, RetrievalError> {
    read_index(BufReader::new(File::open(path)?))
}

/// One `{"id", "text"}` object per line.
pub fn read_answers(reader: impl Read) -> Result<Vec<AnswerDoc>, RetrievalError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| RetrievalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn load_answers(path: impl AsRef<Path>) -> Result<Vec<AnswerDoc>, RetrievalError> {
    read_answers(File::open(path)?)
}

pub fn write_answers(answers: &[AnswerDoc], mut w: impl Write) -> Result<(), RetrievalError> {
    for a in answers {
        serde_json::to_writer(&mut w, a).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// `question_id \t answer_id` lines.
pub fn read_qrels(reader: impl Read) -> Result<Vec<(String, String)>, RetrievalError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(q), Some(a), None) if !q.is_empty() && !a.is_empty() => {
                out.push((q.to_string(), a.trim_end().to_string()))
            }
            _ => {
                return Err(RetrievalError::Parse {
                    line: i + 1,
                    message: "expected question_id<TAB>answer_id".into(),
                })
            }
        }
    }
    Ok(out)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, RetrievalError> {
    read_qrels(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{terms, BoostProfile, QueryField};
    use std::collections::HashSet;

    fn index() -> FieldedIndex {
        let answers: Vec<AnswerDoc> = [
            ("a", "disk full error"),
            ("b", "disk disk cleanup"),
            ("c", "reboot now"),
        ]
        .iter()
        .map(|(id, t)| AnswerDoc {
            id: id.to_string(),
            text: t.to_string(),
        })
        .collect();
        FieldedIndex::build(&answers, 0, &HashSet::new()).unwrap()
    }

    #[test]
    fn index_round_trip() {
        let idx = index();
        let mut buf = Vec::new();
        write_index(&idx, &mut buf).unwrap();
        let back = read_index(buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        let q = [QueryField {
            label: None,
            terms: terms("disk error reboot"),
        }];
        let u = BoostProfile::uniform();
        assert_eq!(
            back.search(&q, &u, 5).unwrap(),
            idx.search(&q, &u, 5).unwrap()
        );
        assert!(read_index(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(1);
        assert!(read_index(extra.as_slice()).is_err());
        assert!(read_index(&b"NOPE"[..]).is_err());
    }

    #[test]
    fn answers_and_qrels() {
        let answers = vec![AnswerDoc {
            id: "x".into(),
            text: "hello".into(),
        }];
        let mut buf = Vec::new();
        write_answers(&answers, &mut buf).unwrap();
        assert_eq!(read_answers(buf.as_slice()).unwrap(), answers);
        assert!(read_answers(&b"{\"id\": 1}\n"[..]).is_err());
        let q = read_qrels(&b"q1\ta9\n\nq2\ta3\n"[..]).unwrap();
        assert_eq!(
            q,
            vec![("q1".into(), "a9".into()), ("q2".into(), "a3".into())]
        );
        assert!(read_qrels(&b"q1 a9\n"[..]).is_err());
    }
}
