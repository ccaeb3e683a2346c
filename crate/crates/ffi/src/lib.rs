//! C ABI over `fairvit-core`.
//!
//! Models are opaque handles created by [`fvit_model_load`] and released with
//! [`fvit_model_free`]. Every function returns an [`FvitStatus`]; on failure
//! [`fvit_last_error_message`] describes the most recent error on the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use fairvit_core::data::Image;
use fairvit_core::explain::gradient_attention_rollout;
use fairvit_core::metrics::{EvalRecord, FairnessReport};
use fairvit_core::model::argmax;
use fairvit_core::{Checkpoint, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FvitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    UndefinedMetric = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct FvitModel {
    inner: Checkpoint<f32>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FvitModelInfo {
    pub image_size: u32,
    pub channels: u32,
    pub patch_size: u32,
    pub layers: u32,
    pub heads: u32,
    pub head_dim: u32,
    pub num_classes: u32,
    pub groups: u32,
    /// Number of image patches, i.e. the length of a heat vector.
    pub patches: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FvitFairnessReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub demographic_parity: f64,
    pub equalized_opportunity: f64,
    /// Counts indexed `s * 4 + y_true * 2 + y_pred`.
    pub counts: [u64; 8],
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> FvitStatus {
    match e {
        Error::Io { .. } => FvitStatus::Io,
        Error::Format(_) | Error::Parse { .. } => FvitStatus::Format,
        Error::Shape(_) => FvitStatus::Shape,
        Error::UndefinedMetric(_) => FvitStatus::UndefinedMetric,
        Error::Config(_) | Error::Contract(_) | Error::NonFinite { .. } => {
            FvitStatus::InvalidArgument
        }
    }
}

struct Fail(FvitStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FvitStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FvitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FvitStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FvitStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const FvitModel) -> Result<&'a FvitModel, Fail> {
    model.as_ref().ok_or_else(|| null("model"))
}

unsafe fn input_image(model: &FvitModel, pixels: *const f32, len: usize) -> Result<Image, Fail> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let c = &model.inner.model.config;
    let want = c.channels * c.image_size * c.image_size;
    if len != want {
        return Err(Fail(
            FvitStatus::Shape,
            format!("expected {want} pixel values, got {len}"),
        ));
    }
    let data = slice::from_raw_parts(pixels, len).to_vec();
    Ok(Image::new(c.channels, c.image_size, c.image_size, data)?)
}

/// Message for the last failed call on this thread. Empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fvit_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads an FVIT checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fvit_model_load(path: *const c_char, out: *mut *mut FvitModel) -> FvitStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(FvitStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = Checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(FvitModel { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`fvit_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fvit_model_free(model: *mut FvitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fvit_model_info(model: *const FvitModel, out: *mut FvitModelInfo) -> FvitStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = &m.inner.model.config;
        let n = |v: usize| v as u32;
        *out = FvitModelInfo {
            image_size: n(c.image_size),
            channels: n(c.channels),
            patch_size: n(c.patch_size),
            layers: n(c.layers),
            heads: n(c.heads),
            head_dim: n(c.head_dim),
            num_classes: n(c.num_classes),
            groups: n(m.inner.bank.groups()),
            patches: n(c.grid() * c.grid()),
        };
        Ok(())
    })
}

/// Raw class scores and the predicted label for one CHW image in `[0, 1]`.
/// `scores` may be null; otherwise it must hold `scores_len >= num_classes`.
///
/// # Safety
/// `pixels` must hold `pixels_len` floats, `scores` `scores_len` floats,
/// and `label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fvit_model_predict(
    model: *const FvitModel,
    pixels: *const f32,
    pixels_len: usize,
    scores: *mut f32,
    scores_len: usize,
    label: *mut u32,
) -> FvitStatus {
    guard(|| {
        let m = model_ref(model)?;
        let label = label.as_mut().ok_or_else(|| null("label"))?;
        let image = input_image(m, pixels, pixels_len)?;
        let s = m.inner.model.forward(&image, &m.inner.bank)?;
        if !scores.is_null() {
            if scores_len < s.len() {
                return Err(Fail(
                    FvitStatus::InvalidArgument,
                    format!("scores buffer holds {scores_len}, need {}", s.len()),
                ));
            }
            slice::from_raw_parts_mut(scores, s.len()).copy_from_slice(&s);
        }
        *label = argmax(&s) as u32;
        Ok(())
    })
}

/// Per-patch rollout heat for `target`. `heat` must hold `patches` values.
///
/// # Safety
/// `pixels` must hold `pixels_len` floats and `heat` `heat_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fvit_model_rollout(
    model: *const FvitModel,
    pixels: *const f32,
    pixels_len: usize,
    target: u32,
    heat: *mut f64,
    heat_len: usize,
) -> FvitStatus {
    guard(|| {
        let m = model_ref(model)?;
        if heat.is_null() {
            return Err(null("heat"));
        }
        let image = input_image(m, pixels, pixels_len)?;
        let r = gradient_attention_rollout(&m.inner.model, &m.inner.bank, &image, target as usize)?;
        if heat_len != r.heat.len() {
            return Err(Fail(
                FvitStatus::InvalidArgument,
                format!("heat buffer holds {heat_len}, need {}", r.heat.len()),
            ));
        }
        slice::from_raw_parts_mut(heat, heat_len).copy_from_slice(&r.heat);
        Ok(())
    })
}

/// Accuracy, balanced accuracy, demographic parity and equalized opportunity
/// over `n` records. All label arrays hold 0/1 bytes.
///
/// # Safety
/// The three arrays must hold `n` bytes each and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fvit_fairness_report(
    y_pred: *const u8,
    y_true: *const u8,
    s: *const u8,
    n: usize,
    out: *mut FvitFairnessReport,
) -> FvitStatus {
    guard(|| {
        if y_pred.is_null() || y_true.is_null() || s.is_null() {
            return Err(null("label array"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (p, y, s) = (
            slice::from_raw_parts(y_pred, n),
            slice::from_raw_parts(y_true, n),
            slice::from_raw_parts(s, n),
        );
        let records = (0..n)
            .map(|i| EvalRecord::new(p[i], y[i], s[i]))
            .collect::<Result<Vec<_>, _>>()?;
        let r = FairnessReport::from_records(&records)?;
        let mut counts = [0u64; 8];
        for (i, c) in counts.iter_mut().enumerate() {
            *c = r.counts.get(i / 4, (i / 2) % 2, i % 2);
        }
        *out = FvitFairnessReport {
            accuracy: r.accuracy,
            balanced_accuracy: r.ba,
            demographic_parity: r.dp,
            equalized_opportunity: r.eo,
            counts,
        };
        Ok(())
    })
}
