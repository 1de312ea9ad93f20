//! C ABI over the `obalex` core.
//!
//! Objects are opaque handles created by `obx_*_new`/`obx_*_load` style calls
//! and released with the matching `obx_*_free`. Every fallible call returns an
//! [`ObxStatus`]; on failure `obx_last_error_message` describes the error for
//! the calling thread. Images are passed as row-major, channel-interleaved
//! doubles in [0, 1].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use obalex::explain::{explain, ExplainerConfig, Method};
use obalex::io::{load_heatmap, load_mask, Image};
use obalex::metric::{avg_score, normalize_explanation, score, ScoredImage};
use obalex::net::TinyNet;
use obalex::{ActivationMap, Error, ExplanationMap, Grid};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    EmptyExplanation = 4,
    NoCorrectClassifications = 5,
    Io = 6,
    UnsupportedFormat = 7,
    LabelOutOfRange = 8,
    BadMagic = 9,
    VersionUnsupported = 10,
    Malformed = 11,
    Panic = 12,
}

/// Fuzzy object mask.
pub struct ObxMask(ActivationMap);

/// Normalized explanation map.
pub struct ObxExplanation(ExplanationMap);

/// Trained network.
pub struct ObxModel(TinyNet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> ObxStatus {
    match e {
        Error::ShapeMismatch { .. } => ObxStatus::ShapeMismatch,
        Error::EmptyExplanation => ObxStatus::EmptyExplanation,
        Error::NoCorrectClassifications => ObxStatus::NoCorrectClassifications,
        Error::Io { .. } => ObxStatus::Io,
        Error::UnsupportedFormat { .. } => ObxStatus::UnsupportedFormat,
        Error::LabelOutOfRange { .. } => ObxStatus::LabelOutOfRange,
        Error::BadMagic => ObxStatus::BadMagic,
        Error::VersionUnsupported(_) => ObxStatus::VersionUnsupported,
        Error::Malformed { .. } => ObxStatus::Malformed,
        _ => ObxStatus::InvalidArgument,
    }
}

struct Fail(ObxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ObxStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ObxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ObxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ObxStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(ObxStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn image_arg(
    values: *const f64,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Image, Fail> {
    let v = slice(values, height * width * channels, "image values")?;
    Ok(Image::new(height, width, channels, v.to_vec())?)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn obx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `obx_*` call on the same thread.
#[no_mangle]
pub extern "C" fn obx_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Mask from `height * width` row-major memberships in [0, 1].
///
/// # Safety
/// `values` must point to `height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_mask_new(
    height: usize,
    width: usize,
    values: *const f64,
    out: *mut *mut ObxMask,
) -> ObxStatus {
    guard(|| {
        let v = slice(values, height * width, "values")?;
        let mask = ActivationMap::new(Grid::new(height, width, v.to_vec())?)?;
        put(out, ObxMask(mask))
    })
}

/// Mask from an 8-bit grayscale PNG (255 = fully inside the object).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_mask_load_png(path: *const c_char, out: *mut *mut ObxMask) -> ObxStatus {
    guard(|| {
        let mask = load_mask(path_arg(path)?)?;
        put(out, ObxMask(mask))
    })
}

/// # Safety
/// `mask` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn obx_mask_free(mask: *mut ObxMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Clamps negatives and scales so the maximum is 1. An all-nonpositive input
/// gives an all-zero map, which `obx_score` rejects.
///
/// # Safety
/// `raw` must point to `height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_explanation_normalize(
    height: usize,
    width: usize,
    raw: *const f64,
    out: *mut *mut ObxExplanation,
) -> ObxStatus {
    guard(|| {
        let v = slice(raw, height * width, "raw")?;
        let map = normalize_explanation(&Grid::new(height, width, v.to_vec())?);
        put(out, ObxExplanation(map))
    })
}

/// Loads a heatmap PNG (with its JSON sidecar when present) and normalizes it.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_explanation_load_heatmap(
    path: *const c_char,
    out: *mut *mut ObxExplanation,
) -> ObxStatus {
    guard(|| {
        let file = load_heatmap(path_arg(path)?)?;
        put(out, ObxExplanation(normalize_explanation(&file.decode())))
    })
}

/// # Safety
/// `map` must be a live handle; `height` and `width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_explanation_dims(
    map: *const ObxExplanation,
    height: *mut usize,
    width: *mut usize,
) -> ObxStatus {
    guard(|| {
        let m = map.as_ref().ok_or_else(|| null("map"))?;
        if height.is_null() || width.is_null() {
            return Err(null("output pointer"));
        }
        *height = m.0.height();
        *width = m.0.width();
        Ok(())
    })
}

/// Copies the row-major values into `out`, which holds `len` doubles.
///
/// # Safety
/// `map` must be a live handle; `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn obx_explanation_values(
    map: *const ObxExplanation,
    out: *mut f64,
    len: usize,
) -> ObxStatus {
    guard(|| {
        let m = map.as_ref().ok_or_else(|| null("map"))?;
        let v = m.0.values();
        if len != v.len() {
            return Err(Fail(
                ObxStatus::ShapeMismatch,
                format!("buffer holds {len} values, map has {}", v.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, len);
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn obx_explanation_free(map: *mut ObxExplanation) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Fraction of explanation mass inside the mask.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_score(
    mask: *const ObxMask,
    map: *const ObxExplanation,
    out: *mut f64,
) -> ObxStatus {
    guard(|| {
        let a = mask.as_ref().ok_or_else(|| null("mask"))?;
        let b = map.as_ref().ok_or_else(|| null("map"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = score(&a.0, &b.0)?;
        Ok(())
    })
}

/// Mean of `scores[i]` over entries with `correct[i] != 0`.
///
/// # Safety
/// `scores` and `correct` must hold `n` elements; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_avg_score(
    scores: *const f64,
    correct: *const u8,
    n: usize,
    out_avg: *mut f64,
    out_n_correct: *mut usize,
) -> ObxStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let c = slice(correct, n, "correct")?;
        if out_avg.is_null() || out_n_correct.is_null() {
            return Err(null("output pointer"));
        }
        let scored: Vec<ScoredImage> = s
            .iter()
            .zip(c)
            .enumerate()
            .map(|(i, (&score, &ok))| ScoredImage {
                image_id: i.to_string(),
                score,
                correctly_classified: ok != 0,
            })
            .collect();
        let d = avg_score(&scored)?;
        *out_avg = d.avg_score;
        *out_n_correct = d.n_correct;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_model_load(path: *const c_char, out: *mut *mut ObxModel) -> ObxStatus {
    guard(|| {
        let net = TinyNet::load(path_arg(path)?)?;
        put(out, ObxModel(net))
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn obx_model_free(model: *mut ObxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Expected input as channels, height, width.
///
/// # Safety
/// `model` must be live; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_model_input_shape(
    model: *const ObxModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
    num_classes: *mut usize,
) -> ObxStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if channels.is_null() || height.is_null() || width.is_null() || num_classes.is_null() {
            return Err(null("output pointer"));
        }
        let s = m.0.input_shape();
        *channels = s.channels;
        *height = s.height;
        *width = s.width;
        *num_classes = m.0.num_classes();
        Ok(())
    })
}

/// Most probable class and its probability.
///
/// # Safety
/// `image` must hold `height * width * channels` doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn obx_model_predict(
    model: *const ObxModel,
    image: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out_class: *mut usize,
    out_probability: *mut f64,
) -> ObxStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let img = image_arg(image, height, width, channels)?;
        if out_class.is_null() || out_probability.is_null() {
            return Err(null("output pointer"));
        }
        let (class, p) = m.0.predict(&img)?;
        *out_class = class;
        *out_probability = p;
        Ok(())
    })
}

/// Explains `target_class`. `method` is a method name (`occlusion`,
/// `gradcam`, `gradcampp`, `surrogate`) for defaults, or a JSON object such
/// as `{"method":"occlusion","patch":4}`.
///
/// # Safety
/// `image` must hold `height * width * channels` doubles; `method` must be
/// a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn obx_explain(
    model: *const ObxModel,
    image: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    method: *const c_char,
    target_class: usize,
    out: *mut *mut ObxExplanation,
) -> ObxStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if method.is_null() {
            return Err(null("method"));
        }
        let spec = CStr::from_ptr(method)
            .to_str()
            .map_err(|_| Fail(ObxStatus::InvalidArgument, "method is not UTF-8".into()))?
            .trim();
        let config: ExplainerConfig = if spec.starts_with('{') {
            serde_json::from_str(spec)
                .map_err(|e| Fail(ObxStatus::InvalidArgument, e.to_string()))?
        } else {
            ExplainerConfig::default_for(spec.parse::<Method>()?)
        };
        let img = image_arg(image, height, width, channels)?;
        let map = explain(&config, &m.0, &img, target_class)?;
        put(out, ObxExplanation(map))
    })
}
