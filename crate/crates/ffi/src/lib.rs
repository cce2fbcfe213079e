//! C ABI for proofminer.
//!
//! Objects cross the boundary as opaque handles (`PmCorpus`, `PmModel`,
//! `PmSession`) that the caller releases with the matching `pm_*_free`.
//! Fallible functions return a `PmStatus` and write results through out
//! pointers; on failure `pm_last_error_message` describes the error for the
//! calling thread. Strings returned by the library are released with
//! `pm_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use proofminer::efsm::{walk, AcceptMode, Efsm};
use proofminer::evaluation::{run_experiment, Experiment};
use proofminer::guidance::Session;
use proofminer::inference::{infer, InferenceConfig};
use proofminer::parser::parse_corpus;
use proofminer::trace::{Corpus, Label, ParamVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Model = 5,
    Inference = 6,
    Evaluation = 7,
    Guidance = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmMode {
    Guarded = 0,
    ControlOnly = 1,
}

impl From<PmMode> for AcceptMode {
    fn from(m: PmMode) -> Self {
        match m {
            PmMode::Guarded => AcceptMode::Guarded,
            PmMode::ControlOnly => AcceptMode::ControlOnly,
        }
    }
}

pub struct PmCorpus {
    inner: Corpus,
}

pub struct PmModel {
    inner: Arc<Efsm>,
}

pub struct PmSession {
    inner: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PmStatus, String);

type Res<T> = Result<T, Failure>;

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn run(f: impl FnOnce() -> Res<()>) -> PmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PmStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PmStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(PmStatus::NullArgument, format!("{what} is null")))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(PmStatus::NullArgument, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err(Failure(PmStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn text_list<'a>(
    items: *const *const c_char,
    count: usize,
    what: &str,
) -> Res<Vec<&'a str>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if items.is_null() {
        return Err(Failure(PmStatus::NullArgument, format!("{what} is null")));
    }
    std::slice::from_raw_parts(items, count)
        .iter()
        .map(|&p| text(p, what))
        .collect()
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("no interior nul")
        .into_raw()
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Res<()> {
    let out = borrow_mut(out, "out")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Res<()> {
    let out = borrow_mut(out, "out")?;
    *out = into_c_string(s);
    Ok(())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn pm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn pm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses `.v` files into a corpus.
///
/// # Safety
/// `paths` must point to `count` valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_corpus_parse_files(
    paths: *const *const c_char,
    count: usize,
    out: *mut *mut PmCorpus,
) -> PmStatus {
    run(|| {
        let paths: Vec<PathBuf> = text_list(paths, count, "path")?
            .into_iter()
            .map(PathBuf::from)
            .collect();
        let (corpus, _) =
            parse_corpus(&paths).map_err(|e| Failure(PmStatus::Parse, e.to_string()))?;
        put(out, PmCorpus { inner: corpus })
    })
}

/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_corpus_from_json(
    json: *const c_char,
    out: *mut *mut PmCorpus,
) -> PmStatus {
    run(|| {
        let corpus = Corpus::from_json(text(json, "json")?.as_bytes())
            .map_err(|e| Failure(PmStatus::Parse, e.to_string()))?;
        put(out, PmCorpus { inner: corpus })
    })
}

/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_corpus_to_json(
    corpus: *const PmCorpus,
    out: *mut *mut c_char,
) -> PmStatus {
    run(|| {
        let corpus = borrow(corpus, "corpus")?;
        put_string(
            out,
            String::from_utf8(corpus.inner.to_json()).expect("JSON is UTF-8"),
        )
    })
}

/// Number of traces, or 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_corpus_len(corpus: *const PmCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_corpus_free(corpus: *mut PmCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Infers a model. `config_json` may be NULL for defaults.
///
/// # Safety
/// `corpus` must be a live handle, `config_json` NULL or a C string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_infer(
    corpus: *const PmCorpus,
    config_json: *const c_char,
    out: *mut *mut PmModel,
) -> PmStatus {
    run(|| {
        let corpus = borrow(corpus, "corpus")?;
        let config = if config_json.is_null() {
            InferenceConfig::default()
        } else {
            InferenceConfig::from_json(text(config_json, "config")?.as_bytes())
                .map_err(|e| Failure(PmStatus::InvalidArgument, e.to_string()))?
        };
        let model = infer(&corpus.inner, &config)
            .map_err(|e| Failure(PmStatus::Inference, e.to_string()))?;
        put(
            out,
            PmModel {
                inner: Arc::new(model),
            },
        )
    })
}

/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_model_from_json(
    json: *const c_char,
    out: *mut *mut PmModel,
) -> PmStatus {
    run(|| {
        let model = Efsm::from_json(text(json, "json")?.as_bytes())
            .map_err(|e| Failure(PmStatus::Model, e.to_string()))?;
        put(
            out,
            PmModel {
                inner: Arc::new(model),
            },
        )
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_model_to_json(
    model: *const PmModel,
    out: *mut *mut c_char,
) -> PmStatus {
    run(|| {
        let model = borrow(model, "model")?;
        put_string(
            out,
            String::from_utf8(model.inner.to_json()).expect("JSON is UTF-8"),
        )
    })
}

/// GraphViz rendering of the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_model_export_dot(
    model: *const PmModel,
    out: *mut *mut c_char,
) -> PmStatus {
    run(|| {
        let model = borrow(model, "model")?;
        put_string(out, model.inner.export_dot())
    })
}

/// Number of states, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_model_state_count(model: *const PmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.state_count())
}

/// Whether trace `index` of `corpus` is accepted by `model`.
///
/// # Safety
/// `model` and `corpus` must be live handles; `accepted` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_model_accepts(
    model: *const PmModel,
    corpus: *const PmCorpus,
    index: usize,
    mode: PmMode,
    accepted: *mut bool,
) -> PmStatus {
    run(|| {
        let model = borrow(model, "model")?;
        let corpus = borrow(corpus, "corpus")?;
        let trace = corpus.inner.traces().get(index).ok_or_else(|| {
            Failure(
                PmStatus::InvalidArgument,
                format!(
                    "trace index {index} out of range (corpus has {})",
                    corpus.inner.len()
                ),
            )
        })?;
        *borrow_mut(accepted, "accepted")? = walk(&model.inner, trace, mode.into()).accepted();
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed. Sessions keep their own
/// reference to the model.
#[no_mangle]
pub unsafe extern "C" fn pm_model_free(model: *mut PmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Cross validation; writes the report as JSON. `foreign` may be NULL.
///
/// # Safety
/// `corpus` must be a live handle, `foreign` NULL or a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pm_evaluate(
    corpus: *const PmCorpus,
    foreign: *const PmCorpus,
    k: usize,
    negatives: usize,
    seed: u64,
    mode: PmMode,
    out: *mut *mut c_char,
) -> PmStatus {
    run(|| {
        let corpus = borrow(corpus, "corpus")?;
        let empty = Corpus::default();
        let foreign = foreign.as_ref().map_or(&empty, |f| &f.inner);
        let experiment = Experiment {
            k,
            negatives,
            seed,
            mode: mode.into(),
            ..Experiment::default()
        };
        let report = run_experiment(&corpus.inner, foreign, &experiment)
            .map_err(|e| Failure(PmStatus::Evaluation, e.to_string()))?;
        put_string(out, report.to_json())
    })
}

/// Opens a guidance session at the model's initial state.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_session_open(
    model: *const PmModel,
    out: *mut *mut PmSession,
) -> PmStatus {
    run(|| {
        let model = borrow(model, "model")?;
        put(
            out,
            PmSession {
                inner: Session::open(Arc::clone(&model.inner)),
            },
        )
    })
}

/// Options at the cursor as JSON.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_session_options_json(
    session: *const PmSession,
    out: *mut *mut c_char,
) -> PmStatus {
    run(|| {
        let session = borrow(session, "session")?;
        put_string(
            out,
            serde_json::to_string(&session.inner.options()).expect("options serialize"),
        )
    })
}

/// Takes the `label` transition with the given parameters. If `advisory` is
/// not NULL it receives a guard advisory string, or NULL when there is none.
///
/// # Safety
/// `session` must be a live handle; `label` a C string; `params` must point
/// to `count` C strings; `advisory` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn pm_session_step(
    session: *mut PmSession,
    label: *const c_char,
    params: *const *const c_char,
    count: usize,
    combined: bool,
    advisory: *mut *mut c_char,
) -> PmStatus {
    run(|| {
        let session = borrow_mut(session, "session")?;
        let label = Label::new(text(label, "label")?)
            .map_err(|e| Failure(PmStatus::InvalidArgument, e.to_string()))?;
        let values = ParamVector::new(&text_list(params, count, "params")?, combined)
            .map_err(|e| Failure(PmStatus::InvalidArgument, e.to_string()))?;
        let note = session
            .inner
            .step(label, values)
            .map_err(|e| Failure(PmStatus::Guidance, e.to_string()))?;
        if let Some(out) = advisory.as_mut() {
            *out = note.map_or(ptr::null_mut(), |a| into_c_string(a.message));
        }
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_session_undo(session: *mut PmSession) -> PmStatus {
    run(|| {
        let session = borrow_mut(session, "session")?;
        session
            .inner
            .undo()
            .map(drop)
            .map_err(|e| Failure(PmStatus::Guidance, e.to_string()))
    })
}

/// The proof script assembled so far.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_session_script(
    session: *const PmSession,
    out: *mut *mut c_char,
) -> PmStatus {
    run(|| {
        let session = borrow(session, "session")?;
        put_string(out, session.inner.render_script())
    })
}

/// Current state id, or `SIZE_MAX` for NULL.
///
/// # Safety
/// `session` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_session_state(session: *const PmSession) -> usize {
    session
        .as_ref()
        .map_or(usize::MAX, |s| s.inner.cursor().index())
}

/// # Safety
/// `session` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_session_is_accepting(session: *const PmSession) -> bool {
    session.as_ref().is_some_and(|s| s.inner.is_accepting())
}

/// # Safety
/// `session` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_session_free(session: *mut PmSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
