//! C ABI over the staging library.
//!
//! Every entry point returns a [`DrsStatus`]; on failure the message is
//! kept per thread and read back with [`drs_last_error_message`]. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use drstage::cli::{prepare_image, RunConfig};
use drstage::ensemble::{self, Ensemble, OvoEnsemble, Scheme};
use drstage::metrics::{accuracy, binary_rates, kappa, ConfusionMatrix};
use drstage::preprocess::{preprocess_fundus, resize_bilinear, RasterImage};
use drstage::Error;

/// Number of disease stages, and so of scores in a [`DrsDecision`].
pub const DRS_NUM_STAGES: usize = 5;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NoForeground = 5,
    ShapeMismatch = 6,
    InvalidConfig = 7,
    Domain = 8,
    Panic = 9,
}

impl From<&Error> for DrsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } | Error::MissingRoot(_) | Error::MissingClassDir(_) | Error::Decode { .. } => DrsStatus::Io,
            Error::Format(_) => DrsStatus::Format,
            Error::NoForeground | Error::DegenerateRadius => DrsStatus::NoForeground,
            Error::ShapeMismatch(_) | Error::LengthMismatch { .. } => DrsStatus::ShapeMismatch,
            Error::InvalidConfig(_) => DrsStatus::InvalidConfig,
            _ => DrsStatus::Domain,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DrsScheme {
    Cascade = 0,
    Ovo = 1,
}

/// A staged image: the label 0..=4 and one score per stage.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DrsDecision {
    pub label: u32,
    pub scores: [f64; DRS_NUM_STAGES],
}

/// Summary of a confusion matrix. Undefined rates are NaN; sensitivity and
/// specificity treat class 0 as healthy and every other class as diseased.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DrsMetrics {
    pub accuracy: f64,
    pub kappa: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Loaded ensemble plus the preprocessing settings applied before it.
pub struct DrsEnsemble {
    ensemble: Ensemble,
    config: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(DrsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DrsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DrsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DrsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DrsStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DrsStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes of writes.
#[no_mangle]
pub unsafe extern "C" fn drs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn drs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the ensemble described by a manifest file. `config_json` may be
/// null, or a JSON run configuration whose preprocessing settings are used
/// by the classify calls.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be null or
/// valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn drs_ensemble_load(
    manifest_path: *const c_char,
    config_json: *const c_char,
    out: *mut *mut DrsEnsemble,
) -> DrsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = path_arg(manifest_path, "manifest_path")?;
        let config = if config_json.is_null() {
            RunConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| Failure(DrsStatus::InvalidArgument, "config_json is not UTF-8".into()))?;
            RunConfig::from_json(text)?
        };
        config.validate()?;
        let ensemble = Ensemble::load(&path)?;
        *out = Box::into_raw(Box::new(DrsEnsemble { ensemble, config }));
        Ok(())
    })
}

/// Releases an ensemble; null is ignored.
///
/// # Safety
/// `ensemble` must be null or a pointer from [`drs_ensemble_load`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn drs_ensemble_free(ensemble: *mut DrsEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// # Safety
/// `ensemble` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn drs_ensemble_scheme(ensemble: *const DrsEnsemble, out: *mut DrsScheme) -> DrsStatus {
    guard(|| {
        let e = ensemble.as_ref().ok_or_else(|| null("ensemble"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = match e.ensemble.scheme {
            Scheme::Cascade => DrsScheme::Cascade,
            Scheme::Ovo => DrsScheme::Ovo,
        };
        Ok(())
    })
}

fn decision(d: ensemble::Decision) -> DrsDecision {
    let mut scores = [0.0; DRS_NUM_STAGES];
    scores.copy_from_slice(&d.scores);
    DrsDecision {
        label: d.label as u32,
        scores,
    }
}

/// Preprocesses and stages a raw image file.
///
/// # Safety
/// `ensemble` must be a live handle, `image_path` NUL-terminated, and `out`
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn drs_classify_file(
    ensemble: *const DrsEnsemble,
    image_path: *const c_char,
    out: *mut DrsDecision,
) -> DrsStatus {
    guard(|| {
        let e = ensemble.as_ref().ok_or_else(|| null("ensemble"))?;
        let path = path_arg(image_path, "image_path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let img = prepare_image(&path, &e.config)?;
        *out = decision(e.ensemble.decide_image(&img)?);
        Ok(())
    })
}

/// Preprocesses and stages a packed 8-bit RGB image of `width * height`
/// pixels, row-major.
///
/// # Safety
/// `ensemble` must be a live handle, `rgb` valid for `width * height * 3`
/// bytes, and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn drs_classify_rgb(
    ensemble: *const DrsEnsemble,
    rgb: *const u8,
    width: usize,
    height: usize,
    out: *mut DrsDecision,
) -> DrsStatus {
    guard(|| {
        let e = ensemble.as_ref().ok_or_else(|| null("ensemble"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Failure(DrsStatus::InvalidArgument, "image size overflows".into()))?;
        let pixels = std::slice::from_raw_parts(rgb, len).to_vec();
        let img = RasterImage::new(width, height, pixels)?;
        let pre = preprocess_fundus(&img, &e.config.preprocess)?;
        let size = e.config.output_size;
        *out = decision(e.ensemble.decide_image(&resize_bilinear(&pre, size, size))?);
        Ok(())
    })
}

unsafe fn prob_pairs(probs: *const f32, n: usize) -> Result<Vec<[f32; 2]>, Failure> {
    if probs.is_null() {
        return Err(null("probs"));
    }
    Ok(std::slice::from_raw_parts(probs, 2 * n)
        .chunks(2)
        .map(|c| [c[0], c[1]])
        .collect())
}

/// Cascade decision from four (normal, stage) probability pairs stored as
/// eight floats, stage 1 first.
///
/// # Safety
/// `probs` must be valid for 8 reads and `label` for one write.
#[no_mangle]
pub unsafe extern "C" fn drs_cascade_predict(probs: *const f32, label: *mut u32) -> DrsStatus {
    guard(|| {
        let pairs = prob_pairs(probs, 4)?;
        let label = label.as_mut().ok_or_else(|| null("label"))?;
        *label = ensemble::cascade_predict(&pairs)? as u32;
        Ok(())
    })
}

/// One-versus-one decision from ten probability pairs (twenty floats, in
/// the canonical pair order). `scores` may be null; otherwise it receives the
/// five class scores.
///
/// # Safety
/// `probs` must be valid for 20 reads, `label` for one write, and `scores`
/// null or valid for 5 writes.
#[no_mangle]
pub unsafe extern "C" fn drs_ovo_predict(probs: *const f32, label: *mut u32, scores: *mut f64) -> DrsStatus {
    guard(|| {
        let pairs = prob_pairs(probs, 10)?;
        let label = label.as_mut().ok_or_else(|| null("label"))?;
        let e = OvoEnsemble::canonical();
        let s = e.class_scores(&pairs)?;
        *label = e.predict(&pairs)? as u32;
        if !scores.is_null() {
            std::slice::from_raw_parts_mut(scores, s.len()).copy_from_slice(&s);
        }
        Ok(())
    })
}

/// `L (L - 1) / 2` one-versus-one classifiers for `L` classes.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn drs_num_ovo_classifiers(classes: usize, out: *mut usize) -> DrsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ensemble::num_ovo_classifiers(classes)?;
        Ok(())
    })
}

/// Metrics of a `k x k` confusion matrix given row-major, truth by row.
///
/// # Safety
/// `counts` must be valid for `k * k` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn drs_confusion_metrics(counts: *const u64, k: usize, out: *mut DrsMetrics) -> DrsStatus {
    guard(|| {
        if counts.is_null() {
            return Err(null("counts"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let n = k
            .checked_mul(k)
            .ok_or_else(|| Failure(DrsStatus::InvalidArgument, "k overflows".into()))?;
        let flat = std::slice::from_raw_parts(counts, n);
        let cm = ConfusionMatrix::from_rows(flat.chunks(k.max(1)).map(<[u64]>::to_vec).collect())?;
        let b = binary_rates(&cm.collapse_binary())?;
        *out = DrsMetrics {
            accuracy: accuracy(&cm)?,
            kappa: match kappa(&cm) {
                Ok(v) => v,
                Err(Error::DegenerateMarginals) => f64::NAN,
                Err(e) => return Err(e.into()),
            },
            sensitivity: b.sensitivity.value().unwrap_or(f64::NAN),
            specificity: b.specificity.value().unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
