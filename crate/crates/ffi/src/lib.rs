//! C ABI over the `oodr` core.
//!
//! Every fallible function returns an [`OodrStatus`]; on failure the message
//! is available from [`oodr_last_error`] on the same thread. Objects are
//! opaque handles created by `*_build` / `*_load` and released with the
//! matching `*_free`. Panics never cross the boundary; they surface as
//! [`OodrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use oodr::eval::{fpr_at_tpr1_from_split, RocCurve, ScoreSplit};
use oodr::head::MetricHeadModel;
use oodr::lof::ReferenceGroup;
use oodr::{Error, FeatureFile};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    NonFinite = 6,
    Degenerate = 7,
    Panic = 8,
}

impl From<&Error> for OodrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => OodrStatus::Io,
            Error::Format { .. } | Error::Parse { .. } | Error::Json(_) => OodrStatus::Format,
            Error::DimensionMismatch { .. } | Error::ShapeMismatch { .. } => {
                OodrStatus::DimensionMismatch
            }
            Error::NonFinite(_) | Error::Divergence { .. } => OodrStatus::NonFinite,
            Error::DegenerateEmbedding(_) | Error::EmptyGroup | Error::SingleClass => {
                OodrStatus::Degenerate
            }
            _ => OodrStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OodrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(OodrStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OodrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(OodrStatus::InvalidArgument, message.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OodrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OodrStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            OodrStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` must be null or valid for one write.
unsafe fn write<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oodr_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version contains NUL"),
        };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn oodr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

pub struct OodrReferenceGroup(ReferenceGroup);

/// Builds a LOF reference group from `rows * dim` row-major embeddings.
///
/// # Safety
/// `name` must be a NUL-terminated string, `embeddings` valid for
/// `rows * dim` reads and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn oodr_reference_build(
    name: *const c_char,
    embeddings: *const f64,
    rows: usize,
    dim: usize,
    k: usize,
    out: *mut *mut OodrReferenceGroup,
) -> OodrStatus {
    guard(|| {
        let name = string(name, "name")?;
        let len = rows
            .checked_mul(dim)
            .ok_or_else(|| invalid("rows * dim overflows"))?;
        let flat = slice(embeddings, len, "embeddings")?;
        if dim == 0 {
            return Err(invalid("dim must be at least 1"));
        }
        let group = ReferenceGroup::build(name, flat, dim, k)?;
        write(
            out,
            Box::into_raw(Box::new(OodrReferenceGroup(group))),
            "out",
        )
    })
}

/// # Safety
/// `group` must be null or a handle from [`oodr_reference_build`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oodr_reference_free(group: *mut OodrReferenceGroup) {
    if !group.is_null() {
        drop(Box::from_raw(group));
    }
}

/// Number of reference points, 0 for a null handle.
///
/// # Safety
/// `group` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oodr_reference_len(group: *const OodrReferenceGroup) -> usize {
    group.as_ref().map_or(0, |g| g.0.len())
}

/// Embedding dimension, 0 for a null handle.
///
/// # Safety
/// `group` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oodr_reference_dim(group: *const OodrReferenceGroup) -> usize {
    group.as_ref().map_or(0, |g| g.0.dim())
}

/// LOF score of one query of length `dim`.
///
/// # Safety
/// `group` must be a live handle, `query` valid for `dim` reads and `out`
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn oodr_reference_score(
    group: *const OodrReferenceGroup,
    query: *const f64,
    dim: usize,
    out: *mut f64,
) -> OodrStatus {
    guard(|| {
        let group = group.as_ref().ok_or_else(|| null("group"))?;
        let q = slice(query, dim, "query")?;
        write(out, group.0.score(q)?, "out")
    })
}

/// LOF scores of `rows` row-major queries of length `dim` into `out[rows]`.
///
/// # Safety
/// `queries` must be valid for `rows * dim` reads and `out` for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn oodr_reference_score_batch(
    group: *const OodrReferenceGroup,
    queries: *const f64,
    rows: usize,
    dim: usize,
    out: *mut f64,
) -> OodrStatus {
    guard(|| {
        let group = group.as_ref().ok_or_else(|| null("group"))?;
        let len = rows
            .checked_mul(dim)
            .ok_or_else(|| invalid("rows * dim overflows"))?;
        let q = slice(queries, len, "queries")?;
        let out = slice_mut(out, rows, "out")?;
        if dim == 0 && rows > 0 {
            return Err(invalid("dim must be at least 1"));
        }
        for (row, o) in q.chunks_exact(dim.max(1)).zip(out.iter_mut()) {
            *o = group.0.score(row)?;
        }
        Ok(())
    })
}

pub struct OodrModel(MetricHeadModel);

/// Loads a metric head checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn oodr_model_load(
    path: *const c_char,
    out: *mut *mut OodrModel,
) -> OodrStatus {
    guard(|| {
        let model = MetricHeadModel::load(string(path, "path")?)?;
        write(out, Box::into_raw(Box::new(OodrModel(model))), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from [`oodr_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oodr_model_free(model: *mut OodrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oodr_model_input_dim(model: *const OodrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().input_dim)
}

/// Embedding width, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oodr_model_embed_dim(model: *const OodrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().embed_dim)
}

/// Writes the L2-constrained embedding of `input[input_dim]` into
/// `out[embed_dim]`.
///
/// # Safety
/// `model` must be a live handle, `input` valid for `input_dim` reads and
/// `out` valid for `embed_dim` writes.
#[no_mangle]
pub unsafe extern "C" fn oodr_model_embed(
    model: *const OodrModel,
    input: *const f64,
    input_dim: usize,
    out: *mut f64,
    embed_dim: usize,
) -> OodrStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let expected = model.0.config().embed_dim;
        if embed_dim != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: embed_dim,
            }
            .into());
        }
        let x = slice(input, input_dim, "input")?;
        let e = model.0.forward_embed(x)?;
        slice_mut(out, embed_dim, "out")?.copy_from_slice(&e);
        Ok(())
    })
}

pub struct OodrFeatures {
    file: FeatureFile,
    ids: Vec<CString>,
}

/// Loads a feature file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn oodr_features_load(
    path: *const c_char,
    out: *mut *mut OodrFeatures,
) -> OodrStatus {
    guard(|| {
        let file = FeatureFile::load(string(path, "path")?)?;
        let ids = file
            .ids()
            .iter()
            .map(|id| {
                CString::new(id.as_str()).map_err(|_| invalid(format!("id {id:?} contains NUL")))
            })
            .collect::<Result<_, _>>()?;
        write(
            out,
            Box::into_raw(Box::new(OodrFeatures { file, ids })),
            "out",
        )
    })
}

/// # Safety
/// `features` must be null or a handle from [`oodr_features_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oodr_features_free(features: *mut OodrFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Row count, 0 for a null handle.
///
/// # Safety
/// `features` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oodr_features_rows(features: *const OodrFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.file.len())
}

/// Row width, 0 for a null handle.
///
/// # Safety
/// `features` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oodr_features_dim(features: *const OodrFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.file.dim())
}

/// Id of row `i`, or null when out of range. Owned by the handle.
///
/// # Safety
/// `features` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oodr_features_id(
    features: *const OodrFeatures,
    i: usize,
) -> *const c_char {
    features
        .as_ref()
        .and_then(|f| f.ids.get(i))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Pointer to the `dim` values of row `i`, or null when out of range.
/// Owned by the handle.
///
/// # Safety
/// `features` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oodr_features_row(features: *const OodrFeatures, i: usize) -> *const f32 {
    match features.as_ref() {
        Some(f) if i < f.file.len() => f.file.row(i).as_ptr(),
        _ => ptr::null(),
    }
}

/// # Safety
/// Both score arrays must be valid for their lengths.
unsafe fn split(
    normal: *const f64,
    n_normal: usize,
    abnormal: *const f64,
    n_abnormal: usize,
) -> Result<ScoreSplit, Failure> {
    Ok(ScoreSplit {
        normal: slice(normal, n_normal, "normal")?.to_vec(),
        abnormal: slice(abnormal, n_abnormal, "abnormal")?.to_vec(),
    })
}

/// Area under the ROC curve, abnormal being the positive class and larger
/// scores more abnormal.
///
/// # Safety
/// `normal` and `abnormal` must be valid for their lengths and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn oodr_roc_auc(
    normal: *const f64,
    n_normal: usize,
    abnormal: *const f64,
    n_abnormal: usize,
    out: *mut f64,
) -> OodrStatus {
    guard(|| {
        let roc = RocCurve::from_split(&split(normal, n_normal, abnormal, n_abnormal)?)?;
        write(out, roc.auc(), "out")
    })
}

/// Smallest false positive rate among thresholds that flag every abnormal.
///
/// # Safety
/// `normal` and `abnormal` must be valid for their lengths and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn oodr_fpr_at_tpr1(
    normal: *const f64,
    n_normal: usize,
    abnormal: *const f64,
    n_abnormal: usize,
    out: *mut f64,
) -> OodrStatus {
    guard(|| {
        let fpr = fpr_at_tpr1_from_split(&split(normal, n_normal, abnormal, n_abnormal)?)?;
        write(out, fpr, "out")
    })
}
