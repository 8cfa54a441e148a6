//! C ABI for the codec: opaque model handles, byte-buffer compress and
//! decompress, pixel metrics. Every function returns a PwscStatus; details
//! for the last failure on the calling thread come from pwsc_last_error().
//! Buffers handed out here are freed only with the matching pwsc_*_free.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pwsc::metrics;
use pwsc::model::{self, CodecConfig, ModelBundle};
use pwsc::Error;

/// Result of every API call. Non-OK leaves a message in pwsc_last_error().
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PwscStatus {
    PwscOk = 0,
    /// A required pointer was null or a scalar argument was out of range.
    PwscBadArgument = 1,
    /// Input data failed validation (shapes, sizes, values).
    PwscInvalidData = 2,
    /// Stream failed to parse or verify (corrupt, truncated, wrong model).
    PwscBadStream = 3,
    PwscIoError = 4,
    /// Internal panic was caught at the boundary.
    PwscInternal = 5,
}

use PwscStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: PwscStatus, msg: &str) -> PwscStatus {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
    status
}

fn fail_err(e: &Error) -> PwscStatus {
    let status = match e {
        Error::Format(_)
        | Error::Corrupt(_)
        | Error::Truncated { .. }
        | Error::Fingerprint { .. }
        | Error::SymbolRange { .. } => PwscBadStream,
        Error::Io(_) => PwscIoError,
        _ => PwscInvalidData,
    };
    fail(status, &e.to_string())
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pwsc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn guard(body: impl FnOnce() -> PwscStatus) -> PwscStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(_) => fail(PwscInternal, "internal panic"),
    }
}

/// Opaque trained-model handle.
pub struct PwscModel {
    bundle: ModelBundle,
}

/// Loads a PWGT model file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pwsc_model_load(
    path: *const c_char,
    out: *mut *mut PwscModel,
) -> PwscStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(PwscBadArgument, "null pointer");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(PwscBadArgument, "path is not UTF-8");
        };
        match ModelBundle::load(std::path::Path::new(path)) {
            Ok(bundle) => {
                *out = Box::into_raw(Box::new(PwscModel { bundle }));
                PwscOk
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// Builds a freshly initialized (untrained) model, mainly for testing.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pwsc_model_init(
    latent_channels: u32,
    hidden: u32,
    stages: u32,
    seed: u64,
    out: *mut *mut PwscModel,
) -> PwscStatus {
    guard(|| {
        if out.is_null() {
            return fail(PwscBadArgument, "null pointer");
        }
        let config = CodecConfig {
            latent_channels: latent_channels as usize,
            hidden: hidden as usize,
            stages: stages as usize,
            ..CodecConfig::default()
        };
        match ModelBundle::init(config, seed) {
            Ok(bundle) => {
                *out = Box::into_raw(Box::new(PwscModel { bundle }));
                PwscOk
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// # Safety
/// `model` must come from pwsc_model_load/init and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pwsc_model_free(model: *mut PwscModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Content fingerprint stamped into every stream (0 for null).
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pwsc_model_fingerprint(model: *const PwscModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).bundle.fingerprint()
}

/// Compresses a 3xHxW image (channel-major f32 in [0,1]) to a stream.
/// On success `*out`/`*out_len` hold a buffer for pwsc_bytes_free.
///
/// # Safety
/// `pixels` must hold 3*h*w floats; `out` and `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pwsc_compress(
    model: *const PwscModel,
    pixels: *const f32,
    h: u32,
    w: u32,
    out: *mut *mut u8,
    out_len: *mut usize,
) -> PwscStatus {
    guard(|| {
        if model.is_null() || pixels.is_null() || out.is_null() || out_len.is_null() {
            return fail(PwscBadArgument, "null pointer");
        }
        if h == 0 || w == 0 {
            return fail(PwscBadArgument, "zero image dimension");
        }
        let px = std::slice::from_raw_parts(pixels, 3 * h as usize * w as usize);
        match model::compress(&(*model).bundle, px, h as usize, w as usize) {
            Ok(bytes) => {
                let b = bytes.into_boxed_slice();
                *out_len = b.len();
                *out = Box::into_raw(b) as *mut u8;
                PwscOk
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// # Safety
/// `ptr`/`len` must be exactly what pwsc_compress returned (or ptr null).
#[no_mangle]
pub unsafe extern "C" fn pwsc_bytes_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)));
    }
}

/// Decompresses a stream produced by pwsc_compress with the same model.
/// On success `*out` holds 3 * *out_h * *out_w floats for pwsc_pixels_free.
///
/// # Safety
/// `stream` must hold `len` bytes; `out`, `out_h`, `out_w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pwsc_decompress(
    model: *const PwscModel,
    stream: *const u8,
    len: usize,
    out: *mut *mut f32,
    out_h: *mut u32,
    out_w: *mut u32,
) -> PwscStatus {
    guard(|| {
        if model.is_null() || stream.is_null() || out.is_null() || out_h.is_null() || out_w.is_null()
        {
            return fail(PwscBadArgument, "null pointer");
        }
        let bytes = std::slice::from_raw_parts(stream, len);
        match model::decompress(&(*model).bundle, bytes) {
            Ok((pixels, h, w)) => {
                let b = pixels.into_boxed_slice();
                *out = Box::into_raw(b) as *mut f32;
                *out_h = h as u32;
                *out_w = w as u32;
                PwscOk
            }
            Err(e) => fail_err(&e),
        }
    })
}

/// # Safety
/// `ptr`/`h`/`w` must be exactly what pwsc_decompress returned (or ptr null).
#[no_mangle]
pub unsafe extern "C" fn pwsc_pixels_free(ptr: *mut f32, h: u32, w: u32) {
    if !ptr.is_null() {
        let len = 3 * h as usize * w as usize;
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)));
    }
}

/// MSE, PSNR (dB, peak 1.0) and MS-SSIM between two 3xHxW images. Null
/// output pointers skip that metric.
///
/// # Safety
/// `a` and `b` must hold 3*h*w floats each; non-null outputs writable.
#[no_mangle]
pub unsafe extern "C" fn pwsc_quality(
    a: *const f32,
    b: *const f32,
    h: u32,
    w: u32,
    mse_out: *mut f64,
    psnr_out: *mut f64,
    ms_ssim_out: *mut f64,
) -> PwscStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return fail(PwscBadArgument, "null pointer");
        }
        if h == 0 || w == 0 {
            return fail(PwscBadArgument, "zero image dimension");
        }
        let n = 3 * h as usize * w as usize;
        let xa = std::slice::from_raw_parts(a, n);
        let xb = std::slice::from_raw_parts(b, n);
        let mse = match metrics::mse(xa, xb) {
            Ok(v) => v,
            Err(e) => return fail_err(&e),
        };
        if !mse_out.is_null() {
            *mse_out = mse;
        }
        if !psnr_out.is_null() {
            *psnr_out = metrics::psnr_from_mse(mse, 1.0);
        }
        if !ms_ssim_out.is_null() {
            match metrics::ms_ssim(xa, xb, 3, h as usize, w as usize, 1.0) {
                Ok(v) => *ms_ssim_out = v,
                Err(e) => return fail_err(&e),
            }
        }
        PwscOk
    })
}
