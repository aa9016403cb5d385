//! C interface for scoring candidate groups with a trained checkpoint.
//!
//! Every function returns an [`AdaStatus`]. On failure a description of the
//! last error on the calling thread is available from [`ada_last_error`].
//! Models are opaque handles created by [`ada_model_load`] and released with
//! [`ada_model_free`]; a handle may be shared by threads for scoring.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ada_ranker::adaptation::Adaptor;
use ada_ranker::data::GroupView;
use ada_ranker::evaluation::{group_auc, group_ndcg};
use ada_ranker::ranker::BaseRanker;
use ada_ranker::training::{count_params, Checkpoint};
use ada_ranker::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 2,
    /// The file could not be read.
    Io = 3,
    /// The file is not a valid checkpoint.
    Checkpoint = 4,
    /// Adaptor scoring was requested from a checkpoint without an adaptor.
    NoAdaptor = 5,
    /// Scoring produced a non-finite value.
    NonFinite = 6,
    /// An unexpected internal failure; the handle should not be reused.
    Internal = 7,
}

/// A loaded checkpoint.
pub struct AdaModel {
    base: BaseRanker<f32>,
    adaptor: Option<Adaptor<f32>>,
    theta: usize,
    phi: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AdaStatus {
    match e {
        Error::Io(_) => AdaStatus::Io,
        Error::Checkpoint(_) | Error::Config(_) => AdaStatus::Checkpoint,
        Error::NonFinite(_) => AdaStatus::NonFinite,
        _ => AdaStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (AdaStatus, String)>) -> AdaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AdaStatus::Ok
        }
        Ok(Err((s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            AdaStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (AdaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AdaStatus, String) {
    (AdaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (AdaStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` owns a handle that must be released with `ada_model_free`.
#[no_mangle]
pub unsafe extern "C" fn ada_model_load(path: *const c_char, out: *mut *mut AdaModel) -> AdaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (AdaStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let ck = Checkpoint::load(Path::new(path)).map_err(lib_err)?;
        let counts = count_params(&ck).map_err(lib_err)?;
        let (base, adaptor) = ck.model().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AdaModel {
            base,
            adaptor,
            theta: counts.theta,
            phi: counts.phi,
        }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from `ada_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ada_model_free(model: *mut AdaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Item vocabulary size; valid item ids are `0..num_items`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ada_model_num_items(model: *const AdaModel, out: *mut usize) -> AdaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.base.config().num_items;
        Ok(())
    })
}

/// Writes 1 to `out` when the checkpoint carries adaptor parameters, else 0.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ada_model_has_adaptor(
    model: *const AdaModel,
    out: *mut c_int,
) -> AdaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = c_int::from(m.adaptor.is_some());
        Ok(())
    })
}

/// Scalar parameter counts of the base ranker and the adaptor (0 without one).
///
/// # Safety
/// `model` must be a live handle; `theta` and `phi` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ada_model_param_counts(
    model: *const AdaModel,
    theta: *mut usize,
    phi: *mut usize,
) -> AdaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *theta.as_mut().ok_or_else(|| null("theta"))? = m.theta;
        *phi.as_mut().ok_or_else(|| null("phi"))? = m.phi;
        Ok(())
    })
}

/// Scores `n_items` candidates for a user with the given history (oldest
/// first). With `use_adaptor` nonzero the candidates are scored as one group
/// through the adaptor; otherwise the base ranker scores them independently.
///
/// # Safety
/// `history` must point to `history_len` ids, `items` to `n_items` ids and
/// `scores` to room for `n_items` floats.
#[no_mangle]
pub unsafe extern "C" fn ada_model_score_group(
    model: *const AdaModel,
    user: u32,
    history: *const u32,
    history_len: usize,
    items: *const u32,
    n_items: usize,
    use_adaptor: c_int,
    scores: *mut f32,
) -> AdaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let history = slice(history, history_len, "history")?;
        let items = slice(items, n_items, "items")?;
        if n_items == 0 {
            return Err((AdaStatus::InvalidArgument, "no candidates".into()));
        }
        if scores.is_null() {
            return Err(null("scores"));
        }
        let view = GroupView {
            user,
            history,
            items,
        };
        let out = if use_adaptor != 0 {
            let a = m.adaptor.as_ref().ok_or_else(|| {
                (
                    AdaStatus::NoAdaptor,
                    "checkpoint has no adaptor section".to_string(),
                )
            })?;
            a.score_group(&m.base, view).map_err(lib_err)?.scores
        } else {
            m.base.score_groups(&[view], 1).map_err(lib_err)?.remove(0)
        };
        std::slice::from_raw_parts_mut(scores, n_items).copy_from_slice(&out);
        Ok(())
    })
}

/// AUC of the single positive (label 1) against the negatives, ties counting half.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ada_group_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> AdaStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        *out.as_mut().ok_or_else(|| null("out"))? = group_auc(s, l).map_err(lib_err)?;
        Ok(())
    })
}

/// NDCG of the single positive; ties are broken by ascending item id.
///
/// # Safety
/// `scores`, `labels` and `items` must point to `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ada_group_ndcg(
    scores: *const f64,
    labels: *const u8,
    items: *const u32,
    n: usize,
    out: *mut f64,
) -> AdaStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        let i = slice(items, n, "items")?;
        *out.as_mut().ok_or_else(|| null("out"))? = group_ndcg(s, l, i).map_err(lib_err)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ada_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code; unknown codes map to "unknown status".
#[no_mangle]
pub extern "C" fn ada_status_name(status: c_int) -> *const c_char {
    let s: &'static CStr = match status {
        0 => c"ok",
        1 => c"null pointer",
        2 => c"invalid argument",
        3 => c"i/o error",
        4 => c"bad checkpoint",
        5 => c"no adaptor",
        6 => c"non-finite score",
        7 => c"internal error",
        _ => c"unknown status",
    };
    s.as_ptr()
}
