//! C ABI over embedplan: embedding tables, the builtin encoder, trained
//! transition models and the paired t-test.
//!
//! Every fallible function returns an [`EpStatus`]; on failure a message is
//! available from [`ep_last_error`] on the same thread. Handles are opaque
//! and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use embedplan::embed::{BuiltinEncoder, BuiltinEncoderSpec, EmbedError, EmbeddingTable};
use embedplan::eval::{stats_compare, StatsError};
use embedplan::model::{load_checkpoint, ModelError, TransitionModel, HIDDEN};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NotFound = 5,
    DimensionMismatch = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// An embedding table keyed by string id.
pub struct EpTable(EmbeddingTable);

/// The builtin hashed n-gram encoder.
pub struct EpEncoder(BuiltinEncoder);

/// A trained transition model loaded from a checkpoint.
pub struct EpModel(TransitionModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(EpStatus, String);

impl From<EmbedError> for Fail {
    fn from(e: EmbedError) -> Self {
        let status = match &e {
            EmbedError::Format(_) | EmbedError::DuplicateId(_) | EmbedError::ZeroVector(_) => EpStatus::Format,
            EmbedError::DimensionMismatch { .. } => EpStatus::DimensionMismatch,
            EmbedError::MissingText(_) => EpStatus::NotFound,
            EmbedError::Io(_) => EpStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

impl From<ModelError> for Fail {
    fn from(e: ModelError) -> Self {
        let status = match &e {
            ModelError::DimensionMismatch { .. } => EpStatus::DimensionMismatch,
            ModelError::Io(_) => EpStatus::Io,
            _ => EpStatus::Format,
        };
        Fail(status, e.to_string())
    }
}

impl From<StatsError> for Fail {
    fn from(e: StatsError) -> Self {
        Fail(EpStatus::InvalidArgument, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EpStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(EpStatus::BufferTooSmall, format!("{what} holds {len}, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ep_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an empty table of dimension `dim`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_table_new(dim: usize, out: *mut *mut EpTable) -> EpStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail(EpStatus::InvalidArgument, "dim must be positive".into()));
        }
        put(out, Box::into_raw(Box::new(EpTable(EmbeddingTable::new(dim)))), "out")
    })
}

/// Loads an EMBT file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_table_load(path: *const c_char, out: *mut *mut EpTable) -> EpStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let t = EmbeddingTable::load(&path)?;
        put(out, Box::into_raw(Box::new(EpTable(t))), "out")
    })
}

/// Writes the table as an EMBT file.
///
/// # Safety
/// `table` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ep_table_save(table: *const EpTable, path: *const c_char) -> EpStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        Ok(t.0.save(&path)?)
    })
}

/// Returns 0 for a null handle.
///
/// # Safety
/// `table` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ep_table_dim(table: *const EpTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.dim())
}

/// Returns 0 for a null handle.
///
/// # Safety
/// `table` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ep_table_len(table: *const EpTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// Inserts a vector of length `len`; it is L2-normalized on insert.
///
/// # Safety
/// `table` must come from this library, `id` must be NUL-terminated and
/// `vec` must point to `len` floats.
#[no_mangle]
pub unsafe extern "C" fn ep_table_insert(table: *mut EpTable, id: *const c_char, vec: *const f32, len: usize) -> EpStatus {
    guard(|| {
        let t = table.as_mut().ok_or_else(|| null("table"))?;
        let id = str_arg(id, "id")?;
        let v = slice_arg(vec, len, "vec")?;
        Ok(t.0.insert(id, v.to_vec())?)
    })
}

/// Copies the vector for `id` into `out` (capacity `len`, at least the
/// table dimension).
///
/// # Safety
/// `table` must come from this library, `id` must be NUL-terminated and
/// `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ep_table_get(table: *const EpTable, id: *const c_char, out: *mut f32, len: usize) -> EpStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let id = str_arg(id, "id")?;
        let v = t.0.get(id).ok_or_else(|| Fail(EpStatus::NotFound, format!("no embedding for `{id}`")))?;
        out_slice(out, len, v.len(), "out")?.copy_from_slice(v);
        Ok(())
    })
}

/// # Safety
/// `table` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ep_table_free(table: *mut EpTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Builtin encoder with the default n-gram settings and the given output
/// dimension and projection seed.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_encoder_new(dim: usize, seed: u64, out: *mut *mut EpEncoder) -> EpStatus {
    guard(|| {
        if dim == 0 {
            return Err(Fail(EpStatus::InvalidArgument, "dim must be positive".into()));
        }
        let spec = BuiltinEncoderSpec {
            dim,
            seed,
            ..BuiltinEncoderSpec::default()
        };
        put(out, Box::into_raw(Box::new(EpEncoder(BuiltinEncoder::new(spec)))), "out")
    })
}

/// Encodes `text` into `out` (capacity `len`, at least the encoder
/// dimension). The result is unit norm.
///
/// # Safety
/// `enc` must come from this library, `text` must be NUL-terminated and
/// `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ep_encoder_encode(enc: *const EpEncoder, text: *const c_char, out: *mut f32, len: usize) -> EpStatus {
    guard(|| {
        let e = enc.as_ref().ok_or_else(|| null("encoder"))?;
        let v = e.0.encode(str_arg(text, "text")?);
        out_slice(out, len, v.len(), "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// # Safety
/// `enc` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ep_encoder_dim(enc: *const EpEncoder) -> usize {
    enc.as_ref().map_or(0, |e| e.0.spec().dim)
}

/// # Safety
/// `enc` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ep_encoder_free(enc: *mut EpEncoder) {
    if !enc.is_null() {
        drop(Box::from_raw(enc));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_model_load(path: *const c_char, out: *mut *mut EpModel) -> EpStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let (m, _) = load_checkpoint(&path)?;
        put(out, Box::into_raw(Box::new(EpModel(m))), "out")
    })
}

/// Total trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ep_model_param_count(model: *const EpModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// Length of the vector written by `ep_model_predict`.
#[no_mangle]
pub extern "C" fn ep_latent_dim() -> usize {
    HIDDEN
}

/// Predicts the next-state latent for one `(state, action)` embedding pair
/// and writes it to `out` (capacity `out_len` ≥ `ep_latent_dim()`).
///
/// # Safety
/// `model` must come from this library; the input pointers must reference
/// `zs_len` and `za_len` floats and `out` must point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ep_model_predict(
    model: *const EpModel,
    zs: *const f32,
    zs_len: usize,
    za: *const f32,
    za_len: usize,
    out: *mut f64,
    out_len: usize,
) -> EpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let zs = slice_arg(zs, zs_len, "zs")?;
        let za = slice_arg(za, za_len, "za")?;
        let (_, _, pred) = m.0.forward(zs, za)?;
        out_slice(out, out_len, pred.len(), "out")?.copy_from_slice(&pred);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ep_model_free(model: *mut EpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Paired t-test of `a` against `b` (length `n`). Writes the t statistic,
/// two-sided p-value and Cohen's d; any output pointer may be null.
///
/// # Safety
/// `a` and `b` must point to `n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn ep_stats_paired_t(
    a: *const f64,
    b: *const f64,
    n: usize,
    t: *mut f64,
    p: *mut f64,
    d: *mut f64,
) -> EpStatus {
    guard(|| {
        let c = stats_compare(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?, true)?;
        for (ptr, v) in [(t, c.t), (p, c.p), (d, c.cohen_d)] {
            if !ptr.is_null() {
                ptr.write(v);
            }
        }
        Ok(())
    })
}
