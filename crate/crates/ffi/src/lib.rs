//! C ABI for loading segmentation models, labelling text, scoring span
//! predictions and querying BM25 answer indexes.
//!
//! Conventions:
//! - Every fallible function returns a [`TsStatus`]; results come back
//!   through out-pointers, which are left untouched on failure.
//! - After a failure, [`ts_last_error`] describes it. The message belongs to
//!   the library and stays valid until the next failing call on the same
//!   thread.
//! - Strings passed in are NUL-terminated UTF-8. Strings handed out must be
//!   released with [`ts_string_free`]; handles with their own `_free`.
//! - Structured results are JSON.

use std::cell::RefCell;
use std::collections::HashSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde_json::{json, Value};
use techseg::corpus::{read_corpus, AnnotatedDocument};
use techseg::evalmetrics::{evaluate_documents, Averaging};
use techseg::retrieval::{
    self, segment_question, whole_question, BoostProfile, FieldedIndex, RetrievalError,
};
use techseg::trainer::{load_model, SegModel, TrainError};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A file could not be opened, read or written.
    Io = 3,
    /// Input data was malformed or inconsistent.
    Data = 4,
    /// An argument was out of range.
    InvalidArgument = 5,
    /// The library panicked; the call had no effect.
    Internal = 6,
}

/// A trained segmentation model.
pub struct TsModel {
    inner: SegModel,
}

/// A BM25 index over answer documents.
pub struct TsIndex {
    inner: FieldedIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(TsStatus, String);

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure(TsStatus::Data, e.to_string())
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, converting failures and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal error");
            TsStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(TsStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TsStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(TsStatus::NullArgument, format!("{name} is NULL")))
}

fn to_c(value: &Value) -> Result<*mut c_char, Failure> {
    CString::new(value.to_string())
        .map(CString::into_raw)
        .map_err(Failure::data)
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Io(_) => Failure(TsStatus::Io, e.to_string()),
        e => Failure::data(e),
    }
}

fn retrieval_failure(e: RetrievalError) -> Failure {
    match e {
        RetrievalError::Io(_) => Failure(TsStatus::Io, e.to_string()),
        e => Failure::data(e),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread; empty if none.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a model file written by `segtool train`.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_model_load(path: *const c_char, out: *mut *mut TsModel) -> TsStatus {
    guard(|| {
        let path = text(path, "path")?;
        let out = out_ptr(out, "out")?;
        let model = load_model(path).map_err(train_failure)?;
        *out = Box::into_raw(Box::new(TsModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ts_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ts_model_free(model: *mut TsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn segment_json(model: &SegModel, doc: &AnnotatedDocument) -> Result<Value, Failure> {
    let spans = model.predict(doc, None).map_err(Failure::data)?;
    let tokens: Vec<&str> = doc.token_texts().collect();
    let spans: Vec<Value> = spans
        .iter()
        .map(|s| {
            let first = &doc.tokens[s.start];
            let last = &doc.tokens[s.end - 1];
            json!({
                "start": s.start,
                "end": s.end,
                "label": s.label.to_string(),
                "text": &doc.text[first.byte_start..last.byte_end],
            })
        })
        .collect();
    Ok(json!({ "tokens": tokens, "spans": spans }))
}

/// Segments `input` and writes
/// `{"tokens": [...], "spans": [{"start","end","label","text"}]}` to `out`.
/// Token indices are half-open. Models trained with contextual streams are
/// rejected because streams cannot be supplied here.
///
/// # Safety
/// `model` must be a live handle, `input` a valid C string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ts_model_segment(
    model: *const TsModel,
    input: *const c_char,
    out: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        let model = model
            .as_ref()
            .ok_or_else(|| Failure(TsStatus::NullArgument, "model is NULL".into()))?;
        let input = text(input, "input")?;
        let out = out_ptr(out, "out")?;
        let doc = AnnotatedDocument::new("input", input);
        *out = to_c(&segment_json(&model.inner, &doc)?)?;
        Ok(())
    })
}

/// Scores predicted spans against gold spans. Both arguments hold corpus
/// JSON lines with the same documents in the same order. Writes the
/// micro-averaged and per-label report to `out`.
///
/// # Safety
/// `gold` and `pred` must be valid C strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_evaluate(
    gold: *const c_char,
    pred: *const c_char,
    out: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        let gold = read_corpus(text(gold, "gold")?.as_bytes()).map_err(Failure::data)?;
        let pred = read_corpus(text(pred, "pred")?.as_bytes()).map_err(Failure::data)?;
        let out = out_ptr(out, "out")?;
        let spans = |d: &[AnnotatedDocument]| d.iter().map(|x| x.spans.clone()).collect::<Vec<_>>();
        let report = evaluate_documents(&spans(&gold), &spans(&pred), Averaging::Micro)
            .map_err(Failure::data)?;
        *out = to_c(&report.to_json())?;
        Ok(())
    })
}

/// Builds an index from answer JSON lines (`{"id", "text"}` per line).
///
/// # Safety
/// `answers` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_index_build(
    answers: *const c_char,
    out: *mut *mut TsIndex,
) -> TsStatus {
    guard(|| {
        let answers =
            retrieval::read_answers(text(answers, "answers")?.as_bytes()).map_err(Failure::data)?;
        let out = out_ptr(out, "out")?;
        let index = FieldedIndex::build(&answers, 0, &HashSet::new()).map_err(Failure::data)?;
        *out = Box::into_raw(Box::new(TsIndex { inner: index }));
        Ok(())
    })
}

/// Loads an index file written by `segtool index`.
///
/// # Safety
/// `path` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_index_load(path: *const c_char, out: *mut *mut TsIndex) -> TsStatus {
    guard(|| {
        let path = text(path, "path")?;
        let out = out_ptr(out, "out")?;
        let index = retrieval::load_index(path).map_err(retrieval_failure)?;
        *out = Box::into_raw(Box::new(TsIndex { inner: index }));
        Ok(())
    })
}

/// Writes `index` to `path`.
///
/// # Safety
/// `index` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ts_index_save(index: *const TsIndex, path: *const c_char) -> TsStatus {
    guard(|| {
        let index = index
            .as_ref()
            .ok_or_else(|| Failure(TsStatus::NullArgument, "index is NULL".into()))?;
        retrieval::save_index(&index.inner, text(path, "path")?).map_err(retrieval_failure)
    })
}

/// Number of indexed answers; 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_index_len(index: *const TsIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.len())
}

/// # Safety
/// `index` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ts_index_free(index: *mut TsIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Top `k` answers for `query` as `[{"id", "score"}]`.
///
/// With a `model`, the query is segmented and each field is weighted by
/// `boosts_json` (an object mapping labels and `"O"` to positive weights;
/// NULL means uniform). Without a model the whole query is one field.
///
/// # Safety
/// `index` must be a live handle, `model` NULL or a live handle, `query` a
/// valid C string, `boosts_json` NULL or a valid C string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_index_search(
    index: *const TsIndex,
    model: *const TsModel,
    query: *const c_char,
    boosts_json: *const c_char,
    k: usize,
    out: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        let index = index
            .as_ref()
            .ok_or_else(|| Failure(TsStatus::NullArgument, "index is NULL".into()))?;
        let query = text(query, "query")?;
        let out = out_ptr(out, "out")?;
        if k == 0 {
            return Err(Failure(
                TsStatus::InvalidArgument,
                "k must be at least 1".into(),
            ));
        }
        let boosts = if boosts_json.is_null() {
            BoostProfile::uniform()
        } else {
            let v: Value =
                serde_json::from_str(text(boosts_json, "boosts_json")?).map_err(Failure::data)?;
            BoostProfile::from_json(&v).map_err(Failure::data)?
        };
        let doc = AnnotatedDocument::new("query", query);
        let fields = match model.as_ref() {
            Some(m) => {
                let spans = m.inner.predict(&doc, None).map_err(Failure::data)?;
                segment_question(&doc, &spans)
            }
            None => whole_question(&doc),
        };
        let hits = index
            .inner
            .search(&fields, &boosts, k)
            .map_err(Failure::data)?;
        let list: Vec<Value> = hits
            .iter()
            .map(|h| json!({ "id": h.id, "score": h.score }))
            .collect();
        *out = to_c(&Value::Array(list))?;
        Ok(())
    })
}
