use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::SegModel;
use super::optim::{clip_global_norm, Adam};
use super::{TrainConfig, TrainError};
use crate::corpus::AnnotatedDocument;
use crate::embeddings::{ContextualStreamSet, LookupTable};
use crate::evalmetrics::{evaluate_documents, Averaging, Scores};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub val: Scores,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} train_nll {:.6} val_P {:.4} val_R {:.4} val_F1 {:.4}",
            self.epoch, self.train_nll, self.val.precision, self.val.recall, self.val.f1
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The checkpoint with the best validation F1 (the initial model when
    /// no epoch ran).
    pub model: SegModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

/// Micro soft scores of `model` on `docs`.
pub fn score(
    model: &SegModel,
    docs: &[AnnotatedDocument],
    streams: Option<&ContextualStreamSet>,
    jobs: usize,
) -> Result<Scores, TrainError> {
    let pred = model.predict_all(docs, streams, jobs)?;
    let gold: Vec<_> = docs.iter().map(|d| d.spans.clone()).collect();
    Ok(evaluate_documents(&gold, &pred, Averaging::Micro)?.micro)
}

fn stream_dims(
    cfg: &TrainConfig,
    streams: Option<&ContextualStreamSet>,
) -> Result<Vec<usize>, TrainError> {
    if cfg.combine.is_none() {
        return Ok(Vec::new());
    }
    let set = streams.ok_or_else(|| {
        TrainError::Config("a combiner is configured but no streams were given".into())
    })?;
    if cfg.streams.is_empty() {
        return Ok(set.dims.clone());
    }
    cfg.streams
        .iter()
        .map(|&i| {
            set.dims
                .get(i)
                .copied()
                .ok_or_else(|| TrainError::Config(format!("stream index {i} out of range")))
        })
        .collect()
}

/// Groups documents into batches of similar length. Documents are shuffled,
/// sorted by length inside pools of several batches, cut into batches, and
/// the batch order is shuffled again.
fn batches(docs: &[AnnotatedDocument], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for pool in order.chunks(batch_size * 8) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| docs[i].len());
        out.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out.shuffle(rng);
    out
}

/// Builds a model (word vocabulary from the training documents unless a
/// pretrained table is given) and trains it.
pub fn train_with_lookup(
    train_docs: &[AnnotatedDocument],
    val_docs: &[AnnotatedDocument],
    streams: Option<&ContextualStreamSet>,
    cfg: &TrainConfig,
    pretrained: Option<LookupTable>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_docs.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut cfg = cfg.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lookup = match pretrained {
        Some(t) => {
            cfg.word_dim = t.dim();
            Some(t)
        }
        None if cfg.word_dim > 0 => Some(LookupTable::from_tokens(
            train_docs.iter().flat_map(|d| d.token_texts()),
            cfg.word_dim,
            cfg.min_count,
            &mut rng,
        )),
        None => None,
    };
    let dims = stream_dims(&cfg, streams)?;
    let mut model = SegModel::new(cfg.clone(), dims, lookup, &mut rng)?;

    // Fail early rather than mid-epoch when streams are missing.
    for doc in train_docs.iter().chain(val_docs) {
        model.doc_streams(streams, doc)?;
    }
    let select: &[AnnotatedDocument] = if val_docs.is_empty() {
        train_docs
    } else {
        val_docs
    };

    let mut adam = Adam::new(cfg.learning_rate, &model);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, SegModel)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut counted = 0usize;
        for (step, batch) in batches(train_docs, cfg.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            let items = batch
                .iter()
                .map(|&i| Ok((&train_docs[i], model.doc_streams(streams, &train_docs[i])?)))
                .collect::<Result<Vec<_>, TrainError>>()?;
            let (loss, mut grads) = model.batch_gradients(&items, Some(&mut rng))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            total += loss;
            counted += items.len();
            grads.scale(1.0 / items.len() as f64);
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model, &grads);
        }
        let val = score(&model, select, streams, 1)?;
        let entry = EpochLog {
            epoch,
            train_nll: total / counted.max(1) as f64,
            val,
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(f, _, _)| val.f1 > *f) {
            best = Some((val.f1, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, Some(e)),
        None => (model, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}

pub fn train(
    train_docs: &[AnnotatedDocument],
    val_docs: &[AnnotatedDocument],
    streams: Option<&ContextualStreamSet>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_with_lookup(train_docs, val_docs, streams, cfg, None, |_| {})
}
