//! C interface to saved cbdl models and to feature extraction.
//!
//! Every fallible function returns a `cbdl_status`. On anything other than
//! `CBDL_STATUS_OK`, `cbdl_last_error()` describes the failure until the next
//! failing call on the same thread. Matrices are row-major with one sample
//! per row.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cbdl::error::Error;
use cbdl::features::{extract_features, FeatureKind, Signal};
use cbdl::harness::archive::load_model;
use cbdl::harness::model::ModelArchive;
use ndarray::ArrayView2;

pub const CBDL_FEATURE_SPECTROGRAM_POOL: u32 = 0;
pub const CBDL_FEATURE_CHROMA: u32 = 1;
pub const CBDL_FEATURE_INTERP_PSD: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbdlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    CorruptFile = 4,
    VersionMismatch = 5,
    DimensionMismatch = 6,
    Numerical = 7,
    Panic = 8,
    Other = 9,
}

/// A loaded model. Create with `cbdl_model_load`, release with
/// `cbdl_model_free`.
pub struct CbdlModel {
    model: ModelArchive,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CbdlStatus {
    match e {
        Error::InvalidParam(_)
        | Error::InvalidSignal(_)
        | Error::SignalTooShort { .. }
        | Error::NoteAboveNyquist { .. }
        | Error::Config(_) => CbdlStatus::InvalidArgument,
        Error::Io(_) => CbdlStatus::Io,
        Error::CorruptArchive(_) | Error::CorruptFile { .. } | Error::Json(_) => CbdlStatus::CorruptFile,
        Error::VersionMismatch { .. } => CbdlStatus::VersionMismatch,
        Error::DimensionMismatch(_) => CbdlStatus::DimensionMismatch,
        Error::NonConvergence { .. } | Error::NonFiniteObjective { .. } => CbdlStatus::Numerical,
        _ => CbdlStatus::Other,
    }
}

/// Runs `f`, recording any error or panic for `cbdl_last_error`.
fn guard<F: FnOnce() -> Result<(), (CbdlStatus, String)>>(f: F) -> CbdlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CbdlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CbdlStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CbdlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CbdlStatus, String) {
    (CbdlStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: String) -> (CbdlStatus, String) {
    (CbdlStatus::InvalidArgument, msg)
}

fn feature_kind(kind: u32) -> Result<FeatureKind, (CbdlStatus, String)> {
    match kind {
        CBDL_FEATURE_SPECTROGRAM_POOL => Ok(FeatureKind::SpectrogramPool),
        CBDL_FEATURE_CHROMA => Ok(FeatureKind::Chroma),
        CBDL_FEATURE_INTERP_PSD => Ok(FeatureKind::InterpPsd),
        other => Err(invalid(format!("unknown feature kind {other}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cbdl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cbdl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model file written by `cbdl train` or `cbdl experiment`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cbdl_model_load(path: *const c_char, out: *mut *mut CbdlModel) -> CbdlStatus {
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
            .map_err(|_| invalid("path is not UTF-8".into()))?;
        let model = load_model(Path::new(path)).map_err(lib_err)?;
        let names = model
            .class_names
            .iter()
            .map(|n| CString::new(n.replace('\0', " ")).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(CbdlModel { model, names }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `cbdl_model_load` and not be freed twice. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn cbdl_model_free(model: *mut CbdlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cbdl_model_num_classes(model: *const CbdlModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_classes())
}

/// Feature dimension the model expects, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cbdl_model_input_dim(model: *const CbdlModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.input_dim())
}

/// Name of class `index`, or NULL when out of range. Owned by the model.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cbdl_model_class_name(model: *const CbdlModel, index: usize) -> *const c_char {
    model
        .as_ref()
        .and_then(|m| m.names.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Classifies `num_samples` feature vectors of length `dim`.
/// `labels_out` receives one zero-based class index per sample. When
/// `decisions_out` is not NULL it receives `num_samples × num_classes`
/// decision values, row-major.
///
/// # Safety
/// `features` must hold `num_samples * dim` doubles, `labels_out`
/// `num_samples` entries and `decisions_out` (if given)
/// `num_samples * num_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbdl_model_predict(
    model: *const CbdlModel,
    features: *const f64,
    num_samples: usize,
    dim: usize,
    labels_out: *mut usize,
    decisions_out: *mut f64,
) -> CbdlStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if num_samples == 0 {
            return Ok(());
        }
        if features.is_null() {
            return Err(null("features"));
        }
        if labels_out.is_null() {
            return Err(null("labels_out"));
        }
        let len = num_samples
            .checked_mul(dim)
            .ok_or_else(|| invalid("num_samples * dim overflows".into()))?;
        let data = std::slice::from_raw_parts(features, len);
        let rows = ArrayView2::from_shape((num_samples, dim), data).map_err(|e| invalid(e.to_string()))?;
        let pred = m.predict(rows.t()).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(labels_out, num_samples).copy_from_slice(&pred.labels);
        if !decisions_out.is_null() {
            let out = std::slice::from_raw_parts_mut(decisions_out, num_samples * m.num_classes());
            for (dst, v) in out.iter_mut().zip(pred.decision_values.iter()) {
                *dst = *v;
            }
        }
        Ok(())
    })
}

/// Length of a feature vector of `kind` for a given analysis window, 0 for
/// an unknown kind.
#[no_mangle]
pub extern "C" fn cbdl_feature_dim(kind: u32, window: usize) -> usize {
    feature_kind(kind).map_or(0, |k| k.dim(window))
}

/// Extracts one feature vector of `kind` from a mono signal into `out`,
/// which must have room for exactly `cbdl_feature_dim(kind, window)` values.
///
/// # Safety
/// `samples` must hold `num_samples` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbdl_extract_features(
    samples: *const f64,
    num_samples: usize,
    sample_rate: u32,
    kind: u32,
    window: usize,
    hop: usize,
    out: *mut f64,
    out_len: usize,
) -> CbdlStatus {
    guard(|| {
        let kind = feature_kind(kind)?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != kind.dim(window) {
            return Err((
                CbdlStatus::DimensionMismatch,
                format!("out has {out_len} entries, {kind} needs {}", kind.dim(window)),
            ));
        }
        let signal =
            Signal::new(std::slice::from_raw_parts(samples, num_samples).to_vec(), sample_rate).map_err(lib_err)?;
        let mut feats = extract_features(&signal, &[kind], window, hop).map_err(lib_err)?;
        let values = feats.remove(0).values;
        std::slice::from_raw_parts_mut(out, out_len)
            .iter_mut()
            .zip(values.iter())
            .for_each(|(d, v)| *d = *v);
        Ok(())
    })
}
