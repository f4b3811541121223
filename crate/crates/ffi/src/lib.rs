//! C interface to `tesh-core`.
//!
//! A checkpoint is opened into an opaque `TeshSession` handle. Functions
//! return a `TeshStatus`; on failure `tesh_last_error()` describes the
//! error for the calling thread. Strings returned through out-pointers
//! are owned by the caller and released with `tesh_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tesh_core::data::{HeteroGraph, Split};
use tesh_core::pipeline::Session;
use tesh_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeshStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Checkpoint = 6,
    UnknownNode = 7,
    Numeric = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A checkpoint bound to its dataset.
pub struct TeshSession {
    inner: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> TeshStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::InvalidArgument(_) => TeshStatus::InvalidArgument,
        Error::OutsideBall { .. } | Error::NonFinite(_) | Error::Gradient { .. } => TeshStatus::Numeric,
        Error::NodeOutOfRange { .. } | Error::UnknownNode(_) => TeshStatus::UnknownNode,
        Error::Parse { .. } | Error::Json(_) => TeshStatus::Parse,
        Error::Checkpoint(_) => TeshStatus::Checkpoint,
        Error::Io(_) => TeshStatus::Io,
    }
}

struct Fail(TeshStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(TeshStatus::Parse, e.to_string())
    }
}

/// Runs `f`, recording any error or panic for `tesh_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TeshStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TeshStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            TeshStatus::Panic
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(TeshStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(TeshStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn session<'a>(s: *const TeshSession) -> Result<&'a Session, Fail> {
    s.as_ref().map(|s| &s.inner).ok_or_else(|| Fail(TeshStatus::NullPointer, "session is null".into()))
}

unsafe fn write_string(out: *mut *mut c_char, text: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(TeshStatus::NullPointer, "output pointer is null".into()));
    }
    let c = CString::new(text).map_err(|_| Fail(TeshStatus::InvalidArgument, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tesh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn tesh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tesh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens a checkpoint. `data` may be NULL to use the dataset directory
/// recorded in the checkpoint.
///
/// # Safety
/// `ckpt` and a non-NULL `data` must be NUL-terminated strings; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_open(
    ckpt: *const c_char,
    data: *const c_char,
    out: *mut *mut TeshSession,
) -> TeshStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(TeshStatus::NullPointer, "output pointer is null".into()));
        }
        *out = ptr::null_mut();
        let ckpt = arg_str(ckpt, "ckpt")?;
        let data = if data.is_null() { None } else { Some(arg_str(data, "data")?) };
        let inner = Session::open(Path::new(ckpt), data.map(Path::new))?;
        *out = Box::into_raw(Box::new(TeshSession { inner }));
        Ok(())
    })
}

/// Releases a session. NULL is ignored.
///
/// # Safety
/// `s` must come from `tesh_session_open` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_free(s: *mut TeshSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of nodes in the session's graph, or 0 for NULL.
///
/// # Safety
/// `s` must be NULL or a live session.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_num_nodes(s: *const TeshSession) -> usize {
    s.as_ref().map_or(0, |s| s.inner.graph.num_nodes())
}

/// Number of edge types scored per pair, or 0 for NULL.
///
/// # Safety
/// `s` must be NULL or a live session.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_num_edge_types(s: *const TeshSession) -> usize {
    s.as_ref().map_or(0, |s| s.inner.model.edge_types.len())
}

/// Name of edge type `k` as a new string.
///
/// # Safety
/// `s` must be a live session and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_edge_type(s: *const TeshSession, k: usize, out: *mut *mut c_char) -> TeshStatus {
    guard(|| {
        let s = session(s)?;
        let name = s.model.edge_types.get(k).ok_or_else(|| {
            Fail(TeshStatus::InvalidArgument, format!("edge type {k} out of range ({})", s.model.edge_types.len()))
        })?;
        write_string(out, name.clone())
    })
}

/// Scores the ordered pair `(i, j)` of node indices. Writes the link
/// probability to `z_prob` and one score per edge type to `y`, which must
/// hold `y_len >= tesh_session_num_edge_types(s)` values.
///
/// # Safety
/// `s` must be a live session, `z_prob` writable, and `y` valid for
/// `y_len` writes.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_predict(
    s: *const TeshSession,
    i: usize,
    j: usize,
    z_prob: *mut f64,
    y: *mut f64,
    y_len: usize,
) -> TeshStatus {
    guard(|| {
        let s = session(s)?;
        if z_prob.is_null() || y.is_null() {
            return Err(Fail(TeshStatus::NullPointer, "output pointer is null".into()));
        }
        let k = s.model.edge_types.len();
        if y_len < k {
            return Err(Fail(TeshStatus::BufferTooSmall, format!("y holds {y_len} values, {k} needed")));
        }
        let p = s.predict(i, j)?;
        *z_prob = p.z_prob;
        std::slice::from_raw_parts_mut(y, k).copy_from_slice(&p.y);
        Ok(())
    })
}

/// Prediction for a pair of node ids (or indices) as a JSON string.
///
/// # Safety
/// `s` must be a live session, `i` and `j` NUL-terminated strings, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_predict_json(
    s: *const TeshSession,
    i: *const c_char,
    j: *const c_char,
    out: *mut *mut c_char,
) -> TeshStatus {
    guard(|| {
        let s = session(s)?;
        let (i, j) = (s.resolve(arg_str(i, "i")?)?, s.resolve(arg_str(j, "j")?)?);
        write_string(out, serde_json::to_string(&s.predict_json(i, j)?)?)
    })
}

/// Metapath trace for a pair of node ids (or indices), keeping `top`
/// cells per layer, as a JSON string.
///
/// # Safety
/// As for `tesh_session_predict_json`.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_explain_json(
    s: *const TeshSession,
    i: *const c_char,
    j: *const c_char,
    top: usize,
    out: *mut *mut c_char,
) -> TeshStatus {
    guard(|| {
        let s = session(s)?;
        let (i, j) = (s.resolve(arg_str(i, "i")?)?, s.resolve(arg_str(j, "j")?)?);
        write_string(out, serde_json::to_string(&s.explain(i, j, top)?.json)?)
    })
}

/// Evaluation report on `"val"` or `"test"` as a JSON string.
///
/// # Safety
/// `s` must be a live session, `split` a NUL-terminated string, and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tesh_session_evaluate_json(
    s: *const TeshSession,
    split: *const c_char,
    out: *mut *mut c_char,
) -> TeshStatus {
    guard(|| {
        let s = session(s)?;
        let split = Split::parse(arg_str(split, "split")?)?;
        write_string(out, serde_json::to_string(&s.evaluate(split)?)?)
    })
}

/// Graph statistics of an ingested dataset directory as a JSON string.
///
/// # Safety
/// `data` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tesh_metrics_json(
    data: *const c_char,
    samples: u64,
    seed: u64,
    out: *mut *mut c_char,
) -> TeshStatus {
    guard(|| {
        let g = HeteroGraph::load_dir(Path::new(arg_str(data, "data")?))?;
        write_string(out, serde_json::to_string(&tesh_core::metrics::summarize(&g, samples, seed)?)?)
    })
}
