//! C ABI over `polypseg`: load a trained checkpoint, run inference and
//! compute segmentation metrics from any language with a C FFI.
//!
//! Conventions:
//! - every fallible function returns a [`PsStatus`]; on failure a message is
//!   available from [`ps_last_error`] on the same thread;
//! - images are planar RGB `double` arrays of length `3·h·w` with values in
//!   `[0, 1]`, channel-major then row-major; `h` and `w` are multiples of 16;
//! - masks are `uint8_t` arrays of length `h·w` holding 0 or 1;
//! - a model handle is created by [`ps_model_load`] and released with
//!   [`ps_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use polypseg::metrics::{anatomical_metrics, boundary_f1, region_metrics};
use polypseg::pedm::Pedm;
use polypseg::trainer::load_model;
use polypseg::{Error, SegMask, Shape, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument or file content failed validation.
    Invalid = 2,
    /// Array dimensions disagree or are unsupported.
    Shape = 3,
    /// A file could not be read or decoded.
    Io = 4,
    /// A computation produced non-finite values.
    Numerical = 5,
    /// The output buffer is too small; required sizes were still written.
    BufferTooSmall = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// Opaque trained model.
pub struct PsModel {
    inner: Pedm,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PsRegionMetrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub acc: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PsAnatomicalMetrics {
    /// Percentage of fold pixels predicted positive.
    pub hf_miss_pct: f64,
    /// 1 when the fold region is empty (`hf_miss_pct` is then 0).
    pub hf_region_empty: u8,
    pub npv: f64,
    pub fdr: f64,
    pub specificity: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PsStatus {
    match e {
        Error::Shape { .. } => PsStatus::Shape,
        Error::NonFinite(_) | Error::Numerical(_) => PsStatus::Numerical,
        Error::Io { .. } | Error::Image { .. } => PsStatus::Io,
        _ => PsStatus::Invalid,
    }
}

struct Fail(PsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PsStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PsStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PsStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn checked_area(h: usize, w: usize) -> Result<usize, Fail> {
    h.checked_mul(w)
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail(PsStatus::Shape, format!("invalid size {h}x{w}")))
}

unsafe fn mask<'a>(ptr: *const u8, h: usize, w: usize, what: &str) -> Result<SegMask, Fail> {
    let n = checked_area(h, w)?;
    Ok(SegMask::new(h, w, slice(ptr, n, what)?.to_vec())?)
}

unsafe fn image<'a>(model: *const PsModel, rgb: *const f64, h: usize, w: usize) -> Result<(&'a Pedm, Tensor), Fail> {
    let m = model.as_ref().ok_or_else(|| null("model"))?;
    let n = checked_area(h, w)?
        .checked_mul(3)
        .ok_or_else(|| Fail(PsStatus::Shape, format!("invalid size {h}x{w}")))?;
    let data = slice(rgb, n, "rgb")?.to_vec();
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Fail(PsStatus::Shape, format!("image {h}x{w} must have sides that are multiples of 16")));
    }
    Ok((&m.inner, Tensor::new(Shape::new(1, 3, h, w), data)?))
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint directory written by training (`ckpt-final` or
/// `ckpt-best`). On success `*out` receives a handle owned by the caller.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_model_load(path: *const c_char, out: *mut *mut PsModel) -> PsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(PsStatus::Invalid, "path is not valid UTF-8".into()))?;
        let inner = load_model(Path::new(p))?;
        *out = Box::into_raw(Box::new(PsModel { inner }));
        Ok(())
    })
}

/// Releases a handle from [`ps_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_model_free(model: *mut PsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Foreground probability for every pixel: writes `h·w` values to `prob`.
///
/// # Safety
/// `rgb` must hold `3·h·w` values and `prob` room for `h·w`.
#[no_mangle]
pub unsafe extern "C" fn ps_model_infer(
    model: *const PsModel,
    rgb: *const f64,
    h: usize,
    w: usize,
    prob: *mut f64,
) -> PsStatus {
    guard(|| {
        let (m, img) = image(model, rgb, h, w)?;
        if prob.is_null() {
            return Err(null("prob"));
        }
        let out = m.forward(&img, None)?;
        std::ptr::copy_nonoverlapping(out.prob.plane(0, 0).as_ptr(), prob, h * w);
        Ok(())
    })
}

/// Attention map `Attn_level` (level 1 finest through 4 coarsest). Writes
/// its size to `out_h`/`out_w`, then the values to `out` when `capacity`
/// suffices; otherwise returns `BufferTooSmall`.
///
/// # Safety
/// `rgb` must hold `3·h·w` values, `out` room for `capacity`, and
/// `out_h`/`out_w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_model_attention(
    model: *const PsModel,
    rgb: *const f64,
    h: usize,
    w: usize,
    level: usize,
    out: *mut f64,
    capacity: usize,
    out_h: *mut usize,
    out_w: *mut usize,
) -> PsStatus {
    guard(|| {
        let (m, img) = image(model, rgb, h, w)?;
        if out_h.is_null() || out_w.is_null() {
            return Err(null("out_h/out_w"));
        }
        let fwd = m.forward(&img, None)?;
        let a = fwd
            .attn
            .get(level.wrapping_sub(1))
            .ok_or_else(|| Fail(PsStatus::Invalid, format!("level {level} outside 1..={}", fwd.attn.len())))?;
        let (ah, aw) = (a.shape().h(), a.shape().w());
        *out_h = ah;
        *out_w = aw;
        if capacity < ah * aw {
            return Err(Fail(PsStatus::BufferTooSmall, format!("need {} values, have {capacity}", ah * aw)));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(a.plane(0, 0).as_ptr(), out, ah * aw);
        Ok(())
    })
}

/// Dice, IoU, precision, recall and accuracy of `pred` against `gt`.
///
/// # Safety
/// `pred` and `gt` must hold `h·w` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_region_metrics(
    pred: *const u8,
    gt: *const u8,
    h: usize,
    w: usize,
    out: *mut PsRegionMetrics,
) -> PsStatus {
    guard(|| {
        let (p, g) = (mask(pred, h, w, "pred")?, mask(gt, h, w, "gt")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = region_metrics(&p, &g)?;
        *out = PsRegionMetrics {
            dice: r.dice,
            iou: r.iou,
            precision: r.precision,
            recall: r.recall,
            acc: r.acc,
        };
        Ok(())
    })
}

/// Boundary F1 with matching distance `tolerance` pixels.
///
/// # Safety
/// `pred` and `gt` must hold `h·w` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_boundary_f1(
    pred: *const u8,
    gt: *const u8,
    h: usize,
    w: usize,
    tolerance: f64,
    out: *mut f64,
) -> PsStatus {
    guard(|| {
        let (p, g) = (mask(pred, h, w, "pred")?, mask(gt, h, w, "gt")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = boundary_f1(&p, &g, tolerance)?;
        Ok(())
    })
}

/// Fold miss rate and background-side scores. `hf` marks the fold region,
/// which must not overlap `gt`.
///
/// # Safety
/// `pred`, `gt` and `hf` must hold `h·w` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_anatomical_metrics(
    pred: *const u8,
    gt: *const u8,
    hf: *const u8,
    h: usize,
    w: usize,
    out: *mut PsAnatomicalMetrics,
) -> PsStatus {
    guard(|| {
        let (p, g, f) = (mask(pred, h, w, "pred")?, mask(gt, h, w, "gt")?, mask(hf, h, w, "hf")?);
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let a = anatomical_metrics(&p, &g, &f)?;
        *out = PsAnatomicalMetrics {
            hf_miss_pct: a.hf_miss_pct,
            hf_region_empty: a.hf_region_empty as u8,
            npv: a.npv,
            fdr: a.fdr,
            specificity: a.specificity,
        };
        Ok(())
    })
}
