//! Binary model container: magic `SEGMDL`, `u32` version, `u64` header
//! length, a JSON header, then every tensor as little-endian `f32` in header
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::SegModel;
use super::{TrainConfig, TrainError};
use crate::corpus::BioTag;
use crate::embeddings::LookupTable;
use crate::nn::Parameters;

const MAGIC: &[u8; 6] = b"SEGMDL";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LookupHeader {
    tokens: Vec<String>,
    unk_row: usize,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tag_order: Vec<String>,
    fingerprint: String,
    config: TrainConfig,
    stream_dims: Vec<usize>,
    lookup: Option<LookupHeader>,
    subword_rows: Vec<usize>,
    tensors: Vec<TensorHeader>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Stable hash of everything that determines the model's shape.
pub fn config_fingerprint(config: &TrainConfig, stream_dims: &[usize]) -> String {
    let text = serde_json::to_string(&(config, stream_dims)).expect("config serializes");
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn tag_order() -> Vec<String> {
    BioTag::all().map(|t| t.to_string()).collect()
}

/// Names, shapes and values of every tensor, in file order.
fn tensors(model: &SegModel) -> Vec<(TensorHeader, Vec<f64>)> {
    let mut out = Vec::new();
    if let Some(t) = &model.lookup {
        out.push((
            TensorHeader {
                name: "lookup".into(),
                shape: t.matrix.shape().to_vec(),
            },
            t.matrix.iter().copied().collect(),
        ));
    }
    if let Some(sw) = &model.subword {
        for (b, row) in &sw.rows {
            out.push((
                TensorHeader {
                    name: format!("subword.{b}"),
                    shape: vec![row.len()],
                },
                row.to_vec(),
            ));
        }
    }
    model.dense.visit("", &mut |name, shape, data| {
        out.push((
            TensorHeader {
                name: name.to_string(),
                shape: shape.to_vec(),
            },
            data.to_vec(),
        ))
    });
    out
}

pub fn write_model(model: &SegModel, mut w: impl Write) -> Result<(), TrainError> {
    let list = tensors(model);
    let header = Header {
        tag_order: tag_order(),
        fingerprint: config_fingerprint(&model.config, &model.stream_dims),
        config: model.config.clone(),
        stream_dims: model.stream_dims.clone(),
        lookup: model.lookup.as_ref().map(|t| LookupHeader {
            tokens: t.tokens_by_row(),
            unk_row: t.unk_row,
            trainable: t.trainable,
        }),
        subword_rows: model
            .subword
            .as_ref()
            .map_or(Vec::new(), |s| s.rows.keys().copied().collect()),
        tensors: list
            .iter()
            .map(|(h, _)| TensorHeader {
                name: h.name.clone(),
                shape: h.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, data) in &list {
        for &v in data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_model(model: &SegModel, path: impl AsRef<Path>) -> Result<(), TrainError> {
    write_model(model, BufWriter::new(File::create(path)?))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, TrainError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| bad("truncated tensor data"))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

pub fn read_model(mut r: impl Read) -> Result<SegModel, TrainError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a model file"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("file too short"))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("file too short"))?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    if header.tag_order != tag_order() {
        return Err(bad("tag order differs from this build"));
    }
    if header.fingerprint != config_fingerprint(&header.config, &header.stream_dims) {
        return Err(bad("configuration fingerprint mismatch"));
    }

    let lookup = header.lookup.as_ref().map(|l| {
        LookupTable::from_parts(
            l.tokens.clone(),
            Array2::zeros((l.tokens.len(), header.config.word_dim)),
            l.unk_row,
            l.trainable,
        )
    });
    let mut model = SegModel::new(
        header.config.clone(),
        header.stream_dims.clone(),
        lookup,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    if let Some(sw) = &mut model.subword {
        for &b in &header.subword_rows {
            sw.rows.insert(b, Array1::zeros(sw.dim));
        }
    }
    let expected: Vec<TensorHeader> = tensors(&model).into_iter().map(|(h, _)| h).collect();
    if expected != header.tensors {
        return Err(bad("tensor list does not match the configuration"));
    }

    let mut it = header.tensors.iter();
    if let Some(t) = &mut model.lookup {
        let h = it.next().expect("lookup tensor listed");
        let data = read_f32s(&mut r, h.shape.iter().product())?;
        t.matrix =
            Array2::from_shape_vec(t.matrix.raw_dim(), data).map_err(|e| bad(e.to_string()))?;
    }
    if let Some(sw) = &mut model.subword {
        for row in sw.rows.values_mut() {
            let h = it.next().expect("subword tensor listed");
            *row = Array1::from(read_f32s(&mut r, h.shape[0])?);
        }
    }
    let mut failure = None;
    model.dense.visit_mut(&mut |data| {
        if failure.is_some() {
            return;
        }
        match read_f32s(&mut r, data.len()) {
            Ok(v) => data.copy_from_slice(&v),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after tensors"));
    }
    Ok(model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SegModel, TrainError> {
    read_model(BufReader::new(File::open(path)?))
}
