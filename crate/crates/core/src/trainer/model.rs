use std::collections::HashMap;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainError};
use crate::corpus::{bio_to_spans, spans_to_bio, AnnotatedDocument, BioTag, SegmentSpan, NUM_TAGS};
use crate::crf::{nll_and_grads, viterbi, CrfParams};
use crate::embeddings::{
    CharEncoder, CharTrace, CombinerTrace, ContextualStreamSet, EmbeddingError, LookupTable,
    MetaCombiner, SparseRows, SubwordHashEmbedder,
};
use crate::encoder::{
    AttentionLayer, AttentionMode, AttentionTrace, BiGruEncoder, BiGruTrace, RecurrentMasks,
};
use crate::nn::{flatten, params_join as join, round_f32, Linear, Parameters};

/// Every dense tensor of the model, in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub chars: Option<CharEncoder>,
    pub combiner: Option<MetaCombiner>,
    pub encoder: BiGruEncoder,
    pub attention: Option<AttentionLayer>,
    pub emission: Linear,
    pub crf: CrfParams,
}

impl Parameters for DenseParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let Some(c) = &self.chars {
            c.visit(&join(prefix, "chars"), f);
        }
        if let Some(c) = &self.combiner {
            c.visit(&join(prefix, "combiner"), f);
        }
        self.encoder.visit(&join(prefix, "encoder"), f);
        if let Some(a) = &self.attention {
            a.visit(&join(prefix, "attention"), f);
        }
        self.emission.visit(&join(prefix, "emission"), f);
        self.crf.visit(&join(prefix, "crf"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        if let Some(c) = &mut self.chars {
            c.visit_mut(f);
        }
        if let Some(c) = &mut self.combiner {
            c.visit_mut(f);
        }
        self.encoder.visit_mut(f);
        if let Some(a) = &mut self.attention {
            a.visit_mut(f);
        }
        self.emission.visit_mut(f);
        self.crf.visit_mut(f);
    }
}

/// Character encoder, word and subword embeddings, optional stream
/// combiner, BiGRU, optional attention and a CRF output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub config: TrainConfig,
    /// Widths of the contextual streams the model consumes, in order.
    pub stream_dims: Vec<usize>,
    pub lookup: Option<LookupTable>,
    pub subword: Option<SubwordHashEmbedder>,
    pub dense: DenseParams,
}

/// Gradient buffers matching a [`SegModel`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub dense: DenseParams,
    pub lookup: SparseRows,
    pub subword: SparseRows,
}

impl Gradients {
    pub fn zeros(model: &SegModel) -> Self {
        Gradients {
            dense: crate::nn::zeroed(&model.dense),
            lookup: SparseRows::default(),
            subword: SparseRows::default(),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        let dense: f64 = flatten(&self.dense).iter().map(|g| g * g).sum();
        dense + self.lookup.sq_norm() + self.subword.sq_norm()
    }

    pub fn scale(&mut self, factor: f64) {
        crate::nn::scale(&mut self.dense, factor);
        self.lookup.scale(factor);
        self.subword.scale(factor);
    }

    pub fn is_finite(&self) -> bool {
        flatten(&self.dense).iter().all(|g| g.is_finite())
            && self
                .lookup
                .rows
                .values()
                .chain(self.subword.rows.values())
                .all(|r| r.iter().all(|g| g.is_finite()))
    }
}

/// Per-token features shared by every occurrence of a token in a batch.
struct TokenCache<'a> {
    index: HashMap<&'a str, usize>,
    tokens: Vec<&'a str>,
    rows: Vec<Array1<f64>>,
    char_traces: Vec<CharTrace>,
}

struct DocPass {
    uniq: Vec<usize>,
    streams: Option<Vec<Array2<f64>>>,
    combiner: Option<CombinerTrace>,
    x: Array2<f64>,
    mask: Option<Array2<f64>>,
    rec: Option<RecurrentMasks>,
    gru: BiGruTrace,
    h: Array2<f64>,
    attn: Option<AttentionTrace>,
    a: Array2<f64>,
    emissions: Array2<f64>,
}

fn round_all(p: &mut impl Parameters) {
    p.visit_mut(&mut |data| data.iter_mut().for_each(|v| *v = round_f32(*v)));
}

impl SegModel {
    /// Builds a freshly initialized model. `lookup` must be given exactly
    /// when the configuration enables word embeddings.
    pub fn new(
        config: TrainConfig,
        stream_dims: Vec<usize>,
        lookup: Option<LookupTable>,
        rng: &mut impl Rng,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let mut lookup = match (config.word_dim, lookup) {
            (0, None) => None,
            (0, Some(_)) => {
                return Err(TrainError::Config(
                    "lookup table given but word_dim is 0".into(),
                ))
            }
            (_, None) => {
                return Err(TrainError::Config(
                    "word_dim set but no lookup table".into(),
                ))
            }
            (d, Some(t)) if t.dim() != d => {
                return Err(TrainError::Config(format!(
                    "lookup table width {} != word_dim {d}",
                    t.dim()
                )))
            }
            (_, Some(t)) => Some(t),
        };
        if let Some(t) = &mut lookup {
            t.matrix.mapv_inplace(round_f32);
        }
        let subword = (config.subword_dim > 0).then(|| {
            SubwordHashEmbedder::new(
                config.subword_buckets,
                config.subword_dim,
                config.subword_min_n,
                config.subword_max_n,
                config.seed,
            )
        });
        let chars = config.char_encoder.then(|| CharEncoder::new(rng));
        let combiner = match config.combine {
            Some(mode) => {
                if stream_dims.is_empty() {
                    return Err(TrainError::Config(
                        "a combiner needs at least one stream".into(),
                    ));
                }
                Some(MetaCombiner::new(
                    mode,
                    stream_dims.clone(),
                    config.projected_dim,
                    rng,
                ))
            }
            None => None,
        };
        let token_width =
            config.word_dim + config.subword_dim + chars.as_ref().map_or(0, |c| c.output_dim());
        let input = token_width + combiner.as_ref().map_or(0, |c| c.output_dim());
        let encoder = BiGruEncoder::new(input, config.hidden, rng);
        let attention = (config.attention != AttentionMode::None).then(|| {
            AttentionLayer::new(
                config.attention,
                2 * config.hidden,
                config.attention_width(),
                rng,
            )
        });
        let top = attention
            .as_ref()
            .map_or(2 * config.hidden, |a| a.output_dim());
        let emission = Linear::new(top, NUM_TAGS, rng);
        let mut dense = DenseParams {
            chars,
            combiner,
            encoder,
            attention,
            emission,
            crf: CrfParams::default(),
        };
        round_all(&mut dense);
        Ok(SegModel {
            stream_dims: if config.combine.is_some() {
                stream_dims
            } else {
                Vec::new()
            },
            config,
            lookup,
            subword,
            dense,
        })
    }

    fn token_width(&self) -> usize {
        self.config.word_dim
            + self.config.subword_dim
            + self.dense.chars.as_ref().map_or(0, |c| c.output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.dense.encoder.input_dim()
    }

    /// The streams this model reads for one document, or `None` when the
    /// model has no combiner.
    pub fn doc_streams(
        &self,
        set: Option<&ContextualStreamSet>,
        doc: &AnnotatedDocument,
    ) -> Result<Option<Vec<Array2<f64>>>, TrainError> {
        if self.dense.combiner.is_none() {
            return Ok(None);
        }
        let missing = || TrainError::MissingStreams(doc.id.clone());
        let all = set.ok_or_else(missing)?.get(&doc.id).ok_or_else(missing)?;
        let picked: Vec<&Array2<f32>> = if self.config.streams.is_empty() {
            all.iter().collect()
        } else {
            self.config
                .streams
                .iter()
                .map(|&i| {
                    all.get(i)
                        .ok_or(TrainError::Embedding(EmbeddingError::StreamCountMismatch {
                            expected: i + 1,
                            got: all.len(),
                        }))
                })
                .collect::<Result<_, _>>()?
        };
        if picked.len() != self.stream_dims.len() {
            return Err(EmbeddingError::StreamCountMismatch {
                expected: self.stream_dims.len(),
                got: picked.len(),
            }
            .into());
        }
        let mut out = Vec::with_capacity(picked.len());
        for (i, (m, &d)) in picked.iter().zip(&self.stream_dims).enumerate() {
            if m.ncols() != d {
                return Err(EmbeddingError::DimMismatch {
                    stream: i,
                    expected: d,
                    got: m.ncols(),
                }
                .into());
            }
            if m.nrows() != doc.len() {
                return Err(EmbeddingError::TokenCountMismatch(doc.id.clone()).into());
            }
            out.push(m.mapv(f64::from));
        }
        Ok(Some(out))
    }

    fn cache_tokens<'a>(
        &self,
        docs: impl Iterator<Item = &'a AnnotatedDocument>,
    ) -> Result<TokenCache<'a>, TrainError> {
        let mut cache = TokenCache {
            index: HashMap::new(),
            tokens: Vec::new(),
            rows: Vec::new(),
            char_traces: Vec::new(),
        };
        for doc in docs {
            for tok in doc.token_texts() {
                if cache.index.contains_key(tok) {
                    continue;
                }
                let mut row = Vec::with_capacity(self.token_width());
                if let Some(t) = &self.lookup {
                    row.extend(t.matrix.row(t.row(tok)).iter());
                }
                if let Some(sw) = &self.subword {
                    row.extend(sw.embed(tok)?.iter());
                }
                if let Some(ch) = &self.dense.chars {
                    let tr = ch.trace(tok)?;
                    row.extend(ch.output(&tr).iter());
                    cache.char_traces.push(tr);
                }
                cache.index.insert(tok, cache.tokens.len());
                cache.tokens.push(tok);
                cache.rows.push(Array1::from(row));
            }
        }
        Ok(cache)
    }

    fn forward_doc(
        &self,
        doc: &AnnotatedDocument,
        streams: Option<Vec<Array2<f64>>>,
        cache: &TokenCache,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<DocPass, TrainError> {
        let s = doc.len();
        let uniq: Vec<usize> = doc.token_texts().map(|t| cache.index[t]).collect();
        let mut token_part = Array2::zeros((s, self.token_width()));
        for (j, &u) in uniq.iter().enumerate() {
            token_part.row_mut(j).assign(&cache.rows[u]);
        }
        let (mut x, combiner) = match (&self.dense.combiner, &streams) {
            (Some(c), Some(st)) => {
                let (out, tr) = c.forward(st)?;
                (
                    concatenate(Axis(1), &[token_part.view(), out.view()])
                        .expect("row counts agree"),
                    Some(tr),
                )
            }
            _ => (token_part, None),
        };
        let (mask, rec) = match rng {
            Some(rng) => {
                let mask = (self.config.dropout > 0.0).then(|| {
                    let keep = 1.0 - self.config.dropout;
                    Array2::from_shape_fn(x.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                });
                let rec = (self.config.recurrent_dropout > 0.0).then(|| {
                    RecurrentMasks::sample(self.config.hidden, self.config.recurrent_dropout, rng)
                });
                (mask, rec)
            }
            None => (None, None),
        };
        if let Some(m) = &mask {
            x *= m;
        }
        let (h, gru) = self.dense.encoder.forward(x.view(), rec.as_ref());
        let (a, attn) = match &self.dense.attention {
            Some(layer) => {
                let (a, tr) = layer.forward(h.view())?;
                (a, Some(tr))
            }
            None => (h.clone(), None),
        };
        let emissions = self.dense.emission.forward(a.view());
        Ok(DocPass {
            uniq,
            streams,
            combiner,
            x,
            mask,
            rec,
            gru,
            h,
            attn,
            a,
            emissions,
        })
    }

    /// Backpropagates `d_e` through one document, adding the token-level
    /// part of the input gradient to `d_tokens` (one row per cached token).
    fn backward_doc(
        &self,
        pass: &DocPass,
        d_e: ArrayView2<f64>,
        grads: &mut Gradients,
        d_tokens: &mut Array2<f64>,
    ) {
        let d_a = self
            .dense
            .emission
            .backward(pass.a.view(), d_e, &mut grads.dense.emission);
        let d_h = match (&self.dense.attention, &pass.attn) {
            (Some(layer), Some(tr)) => layer.backward(
                pass.h.view(),
                tr,
                d_a.view(),
                grads.dense.attention.as_mut().unwrap(),
            ),
            _ => d_a,
        };
        let mut d_x = self.dense.encoder.backward(
            pass.x.view(),
            &pass.gru,
            d_h.view(),
            pass.rec.as_ref(),
            &mut grads.dense.encoder,
        );
        if let Some(m) = &pass.mask {
            d_x *= m;
        }
        let tw = self.token_width();
        for (j, &u) in pass.uniq.iter().enumerate() {
            let mut row = d_tokens.row_mut(u);
            row += &d_x.slice(s![j, ..tw]);
        }
        if let (Some(c), Some(tr), Some(st)) = (&self.dense.combiner, &pass.combiner, &pass.streams)
        {
            c.backward(
                st,
                tr,
                d_x.slice(s![.., tw..]),
                grads.dense.combiner.as_mut().unwrap(),
            );
        }
    }

    fn backward_tokens(
        &self,
        cache: &TokenCache,
        d_tokens: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Result<(), TrainError> {
        let wd = self.config.word_dim;
        let sd = self.config.subword_dim;
        for (u, tok) in cache.tokens.iter().enumerate() {
            let d = d_tokens.row(u);
            if let Some(t) = &self.lookup {
                if t.trainable {
                    grads.lookup.add(t.row(tok), d.slice(s![..wd]), 1.0);
                }
            }
            if let Some(sw) = &self.subword {
                sw.backward(tok, d.slice(s![wd..wd + sd]), &mut grads.subword)?;
            }
            if let Some(ch) = &self.dense.chars {
                ch.backward(
                    &cache.char_traces[u],
                    d.slice(s![wd + sd..]),
                    grads.dense.chars.as_mut().unwrap(),
                );
            }
        }
        Ok(())
    }

    /// Summed CRF negative log-likelihood of a batch and its gradients.
    /// Passing `rng` enables dropout.
    pub fn batch_gradients(
        &self,
        batch: &[(&AnnotatedDocument, Option<Vec<Array2<f64>>>)],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients), TrainError> {
        let mut grads = Gradients::zeros(self);
        let docs = batch.iter().map(|(d, _)| *d).filter(|d| !d.is_empty());
        let cache = self.cache_tokens(docs)?;
        let mut d_tokens = Array2::zeros((cache.tokens.len(), self.token_width()));
        let mut total = 0.0;
        for (doc, streams) in batch {
            if doc.is_empty() {
                continue;
            }
            let gold: Vec<usize> = spans_to_bio(doc)?.iter().map(|t| t.index()).collect();
            let pass = self.forward_doc(doc, streams.clone(), &cache, rng.as_deref_mut())?;
            let (loss, d_e, d_crf) = nll_and_grads(pass.emissions.view(), &self.dense.crf, &gold)?;
            total += loss;
            crate::nn::accumulate(&mut grads.dense.crf, &d_crf);
            self.backward_doc(&pass, d_e.view(), &mut grads, &mut d_tokens);
        }
        self.backward_tokens(&cache, &d_tokens, &mut grads)?;
        Ok((total, grads))
    }

    /// Emission scores for one document without dropout.
    pub fn emissions(
        &self,
        doc: &AnnotatedDocument,
        streams: Option<Vec<Array2<f64>>>,
    ) -> Result<Array2<f64>, TrainError> {
        if doc.is_empty() {
            return Ok(Array2::zeros((0, NUM_TAGS)));
        }
        let cache = self.cache_tokens(std::iter::once(doc))?;
        Ok(self.forward_doc(doc, streams, &cache, None)?.emissions)
    }

    /// Stream weights chosen by the combiner for one document (`s × n`).
    pub fn stream_weights(
        &self,
        streams: &[Array2<f64>],
    ) -> Result<Option<Array2<f64>>, TrainError> {
        match &self.dense.combiner {
            Some(c) => Ok(Some(c.forward(streams)?.1.weights)),
            None => Ok(None),
        }
    }

    pub fn predict_tags(
        &self,
        doc: &AnnotatedDocument,
        streams: Option<&ContextualStreamSet>,
    ) -> Result<Vec<BioTag>, TrainError> {
        if doc.is_empty() {
            return Ok(Vec::new());
        }
        let st = self.doc_streams(streams, doc)?;
        let e = self.emissions(doc, st)?;
        Ok(viterbi(e.view(), &self.dense.crf, true)?)
    }

    /// Labelled spans from constrained Viterbi decoding.
    pub fn predict(
        &self,
        doc: &AnnotatedDocument,
        streams: Option<&ContextualStreamSet>,
    ) -> Result<Vec<SegmentSpan>, TrainError> {
        Ok(bio_to_spans(&self.predict_tags(doc, streams)?))
    }

    /// Predicts many documents, splitting the work over `jobs` threads.
    /// Results do not depend on `jobs`.
    pub fn predict_all(
        &self,
        docs: &[AnnotatedDocument],
        streams: Option<&ContextualStreamSet>,
        jobs: usize,
    ) -> Result<Vec<Vec<SegmentSpan>>, TrainError> {
        let jobs = jobs.max(1).min(docs.len().max(1));
        if jobs == 1 {
            return docs.iter().map(|d| self.predict(d, streams)).collect();
        }
        let chunk = docs.len().div_ceil(jobs);
        let parts: Vec<Result<Vec<Vec<SegmentSpan>>, TrainError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = docs
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || part.iter().map(|d| self.predict(d, streams)).collect())
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("prediction worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(docs.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

pub fn predict(
    model: &SegModel,
    doc: &AnnotatedDocument,
    streams: Option<&ContextualStreamSet>,
) -> Result<Vec<SegmentSpan>, TrainError> {
    model.predict(doc, streams)
}
