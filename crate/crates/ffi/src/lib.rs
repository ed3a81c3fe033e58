//! C interface to the tagger.
//!
//! A model is loaded once into an opaque handle and then used to tag
//! sentences or predict embeddings for single words in context. Every call
//! returns an [`OovtagStatus`]; on failure [`oovtag_last_error`] describes
//! what went wrong on the calling thread. Handles may be shared between
//! threads for concurrent read-only calls.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use oovtag::autodiff::Tape;
use oovtag::data::{encode_sentence, load_embedding_table, mark_oov, EmbeddingTable, Normalization, Sentence, TaggedSentence, Word};
use oovtag::eval::tag_sentence;
use oovtag::oov_predictor::{predict_embedding, RandomEmbeddings};
use oovtag::tagger::{context_window_for, natural_oov_mask, EmbedEnv, Model, OovStrategy};
use oovtag::training::{load_checkpoint, random_embeddings};
use oovtag::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OovtagStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    CorruptCheckpoint = 4,
    VersionMismatch = 5,
    /// Malformed or inconsistent input data.
    Data = 6,
    /// Settings that do not fit together, such as a table of the wrong width.
    Config = 7,
    IndexOutOfRange = 8,
    /// The output buffer is too small; the required size was reported.
    BufferTooSmall = 9,
    /// An internal error was caught at the boundary.
    Panic = 10,
}

/// OOV handling codes accepted by [`oovtag_tag_sentence`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OovtagStrategy {
    Predictor = 0,
    Random = 1,
    UnkToken = 2,
}

fn strategy_arg(code: i32) -> Result<OovStrategy, Failure> {
    match code {
        c if c == OovtagStrategy::Predictor as i32 => Ok(OovStrategy::Predictor),
        c if c == OovtagStrategy::Random as i32 => Ok(OovStrategy::Random),
        c if c == OovtagStrategy::UnkToken as i32 => Ok(OovStrategy::UnkToken),
        c => Err(Failure(OovtagStatus::Config, format!("unknown strategy code {c}"))),
    }
}

/// Opaque model handle.
pub struct OovtagModel {
    model: Model,
    table: EmbeddingTable,
    random: RandomEmbeddings,
    norm: Normalization,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> OovtagStatus {
    match e {
        Error::Io(_) => OovtagStatus::Io,
        Error::CorruptCheckpoint(_) => OovtagStatus::CorruptCheckpoint,
        Error::VersionMismatch { .. } => OovtagStatus::VersionMismatch,
        Error::Config(_) => OovtagStatus::Config,
        Error::IndexOutOfRange { .. } => OovtagStatus::IndexOutOfRange,
        _ => OovtagStatus::Data,
    }
}

struct Failure(OovtagStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OovtagStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            OovtagStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal error".to_string());
            set_last_error(&msg);
            OovtagStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(OovtagStatus::NullArgument, format!("{what} is NULL"))
}

/// # Safety
/// `p` is NULL or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(OovtagStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `words` is NULL or points to `n` valid string pointers.
unsafe fn words_arg<'a>(words: *const *const c_char, n: usize) -> Result<Vec<&'a str>, Failure> {
    if words.is_null() {
        return Err(null("words"));
    }
    if n == 0 {
        return Err(Failure(OovtagStatus::Data, Error::EmptySentence.to_string()));
    }
    std::slice::from_raw_parts(words, n)
        .iter()
        .map(|&w| str_arg(w, "word"))
        .collect()
}

impl OovtagModel {
    fn encode(&self, words: &[&str]) -> TaggedSentence {
        let sentence = Sentence {
            comments: Vec::new(),
            words: words.iter().enumerate().map(|(i, w)| Word::new(i + 1, *w, "_")).collect(),
        };
        let mut enc = [encode_sentence(&sentence, &self.model.schema)];
        mark_oov(&mut enc, &self.table, self.norm);
        let [enc] = enc;
        enc
    }

    fn env(&self) -> EmbedEnv<'_> {
        EmbedEnv {
            table: &self.table,
            random: &self.random,
        }
    }
}

/// Loads a checkpoint and the embedding table it was trained with.
///
/// # Safety
/// `checkpoint_path` and `embeddings_path` are NUL-terminated strings and
/// `out` is a valid pointer. On success `*out` owns a handle to be released
/// with [`oovtag_model_free`]; on failure it is set to NULL.
#[no_mangle]
pub unsafe extern "C" fn oovtag_model_load(
    checkpoint_path: *const c_char,
    embeddings_path: *const c_char,
    out: *mut *mut OovtagModel,
) -> OovtagStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ckpt_path = str_arg(checkpoint_path, "checkpoint_path")?;
        let emb_path = str_arg(embeddings_path, "embeddings_path")?;
        let checkpoint = load_checkpoint(ckpt_path)?;
        let model = checkpoint.model()?;
        let table = load_embedding_table(emb_path, Some(model.word_dim()))?;
        let random = random_embeddings(&checkpoint.config, &table);
        let handle = OovtagModel {
            model,
            table,
            random,
            norm: checkpoint.config.normalization,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` is NULL or a handle from [`oovtag_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oovtag_model_free(model: *mut OovtagModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the word vectors the model consumes and predicts; 0 for NULL.
///
/// # Safety
/// `model` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oovtag_model_word_dim(model: *const OovtagModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.word_dim())
}

/// Tags `n` words, routing OOV words by the `OovtagStrategy` code
/// `strategy`. The result is written to `out` as one `UPOS\tFEATS` line
/// per word, NUL-terminated. `*written` receives the byte count including
/// the terminator, or the size needed when the buffer is too small.
///
/// # Safety
/// `model` is a live handle, `words` points to `n` NUL-terminated strings,
/// `out` points to `out_len` writable bytes (may be NULL when `out_len` is
/// 0) and `written` is NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn oovtag_tag_sentence(
    model: *const OovtagModel,
    words: *const *const c_char,
    n: usize,
    strategy: i32,
    out: *mut c_char,
    out_len: usize,
    written: *mut usize,
) -> OovtagStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let strategy = strategy_arg(strategy)?;
        let words = words_arg(words, n)?;
        let enc = m.encode(&words);
        let tags = tag_sentence(&m.model, &enc, &natural_oov_mask(&enc), m.env(), strategy)?;
        let mut text = String::new();
        for t in &tags {
            text.push_str(t.pos_tag(&m.model.schema).unwrap_or("_"));
            text.push('\t');
            text.push_str(&oovtag::data::conllu::format_feats(&t.feats(&m.model.schema)));
            text.push('\n');
        }
        let needed = text.len() + 1;
        if let Some(w) = written.as_mut() {
            *w = needed;
        }
        if out.is_null() || out_len < needed {
            return Err(Failure(
                OovtagStatus::BufferTooSmall,
                format!("output needs {needed} bytes, buffer has {out_len}"),
            ));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), out.cast::<u8>(), text.len());
        *out.add(text.len()) = 0;
        Ok(())
    })
}

/// Predicts the embedding of `words[target]` from its characters and the
/// other words, writing `oovtag_model_word_dim` values to `out`. The target
/// is routed through the predictor even when the table has a row for it.
///
/// # Safety
/// `model` is a live handle, `words` points to `n` NUL-terminated strings
/// and `out` points to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn oovtag_predict_embedding(
    model: *const OovtagModel,
    words: *const *const c_char,
    n: usize,
    target: usize,
    out: *mut f64,
    out_len: usize,
) -> OovtagStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let words = words_arg(words, n)?;
        if target >= n {
            return Err(Error::IndexOutOfRange { index: target, len: n }.into());
        }
        let dim = m.model.word_dim();
        if out_len < dim {
            return Err(Failure(
                OovtagStatus::BufferTooSmall,
                format!("embedding needs {dim} values, buffer has {out_len}"),
            ));
        }
        let enc = m.encode(&words);
        let mut oov = natural_oov_mask(&enc);
        oov[target] = true;
        let window = context_window_for(&enc, &oov, target, m.env(), m.model.predictor.config.max_context)?;
        let mut tape = Tape::new();
        let p = predict_embedding(&mut tape, &m.model.store, &m.model.predictor, &window, &enc.tokens[target].chars)?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(tape.value(p.embedding));
        Ok(())
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn oovtag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oovtag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
