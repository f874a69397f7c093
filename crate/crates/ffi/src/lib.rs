//! C ABI over `trajseg`.
//!
//! Every function returns a [`TsStatus`]; on failure a message is available
//! from [`ts_last_error`] on the same thread. Segmentations cross the boundary
//! as opaque [`TsSegmentation`] handles released with [`ts_segmentation_free`].
//! Matrices are row-major `rows x cols` arrays of `double`. Panics never
//! unwind into the caller; they surface as [`TsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use trajseg::clustering::{tsc_segment, TscConfig};
use trajseg::metrics::{nmi_slices, seg_acc};
use trajseg::model::{segmentation_from_labels, segmentation_to_labels, FrameLabeling, Label, Matrix, Segmentation};
use trajseg::pmdd::{promote, PmddConfig};
use trajseg::wavelet::{denoise, DenoiseConfig};
use trajseg::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidSegmentation = 4,
    BufferTooSmall = 5,
    Numeric = 6,
    Panic = 7,
}

/// Opaque segmentation handle.
pub struct TsSegmentation(Segmentation);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior NULs removed"));
}

fn status_of(e: &Error) -> TsStatus {
    match e {
        Error::DimensionMismatch(_) => TsStatus::DimensionMismatch,
        Error::InvalidSegmentation(_) => TsStatus::InvalidSegmentation,
        Error::OutOfRange(_) | Error::TooFewSamples { .. } | Error::SignalTooShort { .. } => TsStatus::Numeric,
        Error::Stage { source, .. } => status_of(source),
        _ => TsStatus::InvalidArgument,
    }
}

struct Fail(TsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(TsStatus::NullPointer, format!("`{name}` is NULL"))
}

/// Runs `f`, records any failure and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TsStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be NULL or point to `n` readable elements.
unsafe fn input<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(unsafe { slice::from_raw_parts(p, n) })
}

/// # Safety
/// `p` must be NULL or point to `n` writable elements.
unsafe fn output<'a, T>(p: *mut T, n: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(unsafe { slice::from_raw_parts_mut(p, n) })
}

/// # Safety
/// `p` must be NULL or a live handle.
unsafe fn handle<'a>(p: *const TsSegmentation, name: &str) -> Result<&'a Segmentation, Fail> {
    unsafe { p.as_ref() }.map(|h| &h.0).ok_or_else(|| null(name))
}

/// # Safety
/// `p` must be NULL or valid for writes.
unsafe fn put<T>(p: *mut T, value: T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    unsafe { p.write(value) };
    Ok(())
}

fn boxed(seg: Segmentation) -> *mut TsSegmentation {
    Box::into_raw(Box::new(TsSegmentation(seg)))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a segmentation from per-frame labels (maximal runs of equal labels).
///
/// # Safety
/// `labels` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_segmentation_from_labels(labels: *const i64, n: usize, out: *mut *mut TsSegmentation) -> TsStatus {
    guard(|| {
        let labels = unsafe { input(labels, n, "labels") }?;
        if labels.is_empty() {
            return Err(Fail(TsStatus::InvalidArgument, "no labels".into()));
        }
        let seg = segmentation_from_labels(&FrameLabeling::new(labels.to_vec()))?;
        unsafe { put(out, boxed(seg), "out") }
    })
}

/// Builds a segmentation of `frames` frames cut before each of the `n_boundaries`
/// ascending start frames; `labels` holds `n_boundaries + 1` segment labels.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_segmentation_from_boundaries(
    frames: usize,
    boundaries: *const usize,
    n_boundaries: usize,
    labels: *const i64,
    out: *mut *mut TsSegmentation,
) -> TsStatus {
    guard(|| {
        let b = unsafe { input(boundaries, n_boundaries, "boundaries") }?;
        let l = unsafe { input(labels, n_boundaries + 1, "labels") }?;
        let seg = Segmentation::from_boundaries(frames, b, l)?;
        unsafe { put(out, boxed(seg), "out") }
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `seg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ts_segmentation_free(seg: *mut TsSegmentation) {
    if !seg.is_null() {
        drop(unsafe { Box::from_raw(seg) });
    }
}

/// Number of segments and of frames covered.
///
/// # Safety
/// `seg` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_segmentation_shape(seg: *const TsSegmentation, segments: *mut usize, frames: *mut usize) -> TsStatus {
    guard(|| {
        let s = unsafe { handle(seg, "seg") }?;
        unsafe { put(segments, s.len(), "segments") }?;
        unsafe { put(frames, s.frames(), "frames") }
    })
}

/// Writes the per-frame labels into `out` (`capacity` >= frames).
///
/// # Safety
/// `seg` must be a live handle; `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ts_segmentation_labels(seg: *const TsSegmentation, out: *mut i64, capacity: usize) -> TsStatus {
    guard(|| {
        let s = unsafe { handle(seg, "seg") }?;
        if capacity < s.frames() {
            return Err(Fail(TsStatus::BufferTooSmall, format!("need {} labels, capacity {capacity}", s.frames())));
        }
        let labels = segmentation_to_labels(s, s.frames())?;
        unsafe { output(out, s.frames(), "out") }?.copy_from_slice(labels.labels());
        Ok(())
    })
}

/// Writes segment start frames after the first (`capacity` >= segments - 1).
///
/// # Safety
/// `seg` must be a live handle; `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ts_segmentation_boundaries(seg: *const TsSegmentation, out: *mut usize, capacity: usize) -> TsStatus {
    guard(|| {
        let s = unsafe { handle(seg, "seg") }?;
        let b = s.boundaries();
        if capacity < b.len() {
            return Err(Fail(TsStatus::BufferTooSmall, format!("need {} boundaries, capacity {capacity}", b.len())));
        }
        unsafe { output(out, b.len(), "out") }?.copy_from_slice(&b);
        Ok(())
    })
}

/// Normalized mutual information of two equal-length label sequences.
///
/// # Safety
/// `a` and `b` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_nmi(a: *const i64, b: *const i64, n: usize, out: *mut f64) -> TsStatus {
    guard(|| {
        let a: &[Label] = unsafe { input(a, n, "a") }?;
        let b: &[Label] = unsafe { input(b, n, "b") }?;
        unsafe { put(out, nmi_slices(a, b)?, "out") }
    })
}

/// Segmentation accuracy of `pred` against `truth`; a match counts when its IOU exceeds `iou_threshold`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_seg_acc(
    pred: *const TsSegmentation,
    truth: *const TsSegmentation,
    iou_threshold: f64,
    out: *mut f64,
) -> TsStatus {
    guard(|| {
        let p = unsafe { handle(pred, "pred") }?;
        let t = unsafe { handle(truth, "truth") }?;
        unsafe { put(out, seg_acc(p, t, iou_threshold)?.0, "out") }
    })
}

/// db10 denoising of one channel by zeroing `levels` detail bands; writes `n` samples.
///
/// # Safety
/// `signal` and `out` must each hold `n` values; they may alias.
#[no_mangle]
pub unsafe extern "C" fn ts_denoise(signal: *const f64, n: usize, levels: usize, out: *mut f64) -> TsStatus {
    guard(|| {
        let x = unsafe { input(signal, n, "signal") }?.to_vec();
        let cfg = DenoiseConfig {
            levels,
            ..DenoiseConfig::default()
        };
        let y = denoise(&x, &cfg)?;
        unsafe { output(out, n, "out") }?.copy_from_slice(&y);
        Ok(())
    })
}

/// # Safety
/// `data` must hold `rows * cols` values.
unsafe fn matrix(data: *const f64, rows: usize, cols: usize, name: &str) -> Result<Matrix, Fail> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(TsStatus::InvalidArgument, format!("{name}: {rows} x {cols} overflows")))?;
    let values = unsafe { input(data, n, name) }?;
    Ok(Matrix::from_row_slice(rows, cols, values))
}

/// Transition-state clustering over `n_demos` demonstrations sharing `cols` channels.
/// Demonstration `i` is `demos[i]`, `rows[i] x cols`. Writes `n_demos` handles to `out`.
///
/// # Safety
/// `demos` and `rows` must hold `n_demos` entries, each `demos[i]` `rows[i] * cols`
/// values; `out` must hold `n_demos` writable slots.
#[no_mangle]
pub unsafe extern "C" fn ts_tsc_segment(
    demos: *const *const f64,
    rows: *const usize,
    n_demos: usize,
    cols: usize,
    seed: u64,
    out: *mut *mut TsSegmentation,
) -> TsStatus {
    guard(|| {
        let ptrs = unsafe { input(demos, n_demos, "demos") }?;
        let rows = unsafe { input(rows, n_demos, "rows") }?;
        let mats: Vec<Matrix> = ptrs
            .iter()
            .zip(rows)
            .map(|(&p, &r)| unsafe { matrix(p, r, cols, "demos[i]") })
            .collect::<Result<_, _>>()?;
        let slots = unsafe { output(out, n_demos, "out") }?;
        let result = tsc_segment(&mats, &TscConfig { seed, ..TscConfig::default() })?;
        for (slot, seg) in slots.iter_mut().zip(result.segmentations) {
            *slot = boxed(seg);
        }
        Ok(())
    })
}

/// Merges adjacent segments of `seg` over the `rows x cols` feature matrix while the
/// best fused similarity exceeds `tau` (default measures otherwise).
///
/// # Safety
/// `seg` must be a live handle, `data` must hold `rows * cols` values, and
/// `out` / `merges` must be writable (`merges` may be NULL).
#[no_mangle]
pub unsafe extern "C" fn ts_promote(
    seg: *const TsSegmentation,
    data: *const f64,
    rows: usize,
    cols: usize,
    tau: f64,
    out: *mut *mut TsSegmentation,
    merges: *mut usize,
) -> TsStatus {
    guard(|| {
        let s = unsafe { handle(seg, "seg") }?;
        let m = unsafe { matrix(data, rows, cols, "data") }?;
        let cfg = PmddConfig {
            tau,
            ..PmddConfig::default()
        };
        let result = promote(s, &m, &cfg)?;
        if !merges.is_null() {
            unsafe { merges.write(result.merges()) };
        }
        unsafe { put(out, boxed(result.segmentation), "out") }
    })
}
