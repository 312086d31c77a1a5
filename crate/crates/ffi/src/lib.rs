//! C ABI over the neuroquant core.
//!
//! Every fallible call returns an [`NqStatus`]; on failure the message is
//! kept per thread and read back with [`nq_last_error`]. Objects cross the
//! boundary as opaque handles owned by the caller and released with the
//! matching `_free` function. Bit arrays are one byte per bit, values 0 or 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use neuroquant::codes::{parse_alist, SystematicEncoder, TannerGraph};
use neuroquant::decoder::{decode_hard, DecoderConfig};
use neuroquant::quantizer::QuantizerParams;
use neuroquant::{channel, lloyd, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    Io = 4,
    Parse = 5,
    Numerical = 6,
    Panic = 7,
}

/// Parity-check matrix with its Tanner graph and systematic encoder.
pub struct NqCode {
    graph: TannerGraph,
    encoder: SystematicEncoder,
}

/// Frozen neural quantizer loaded from a checkpoint.
pub struct NqQuantizer {
    params: QuantizerParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::SolidTaping(_) => NqStatus::InvalidArgument,
            Error::LengthMismatch { .. } => NqStatus::LengthMismatch,
            Error::Io { .. } => NqStatus::Io,
            Error::Alist(_) | Error::Checkpoint(_) => NqStatus::Parse,
            Error::NanInput(_) | Error::NanGradient { .. } | Error::NotConverged { .. } => NqStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            NqStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NqStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(NqStatus::NullPointer, format!("{name} is null"))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NqStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

fn expect_len(expected: usize, actual: usize) -> Result<(), Failure> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual }.into());
    }
    Ok(())
}

unsafe fn publish<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn nq_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn nq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Noise variance for an Eb/N0 of `snr_db` at code rate `rate`.
#[no_mangle]
pub extern "C" fn nq_snr_to_variance(snr_db: f64, rate: f64) -> f64 {
    channel::snr_to_variance(snr_db, rate)
}

fn new_code(graph: TannerGraph) -> NqCode {
    let encoder = SystematicEncoder::new(&graph);
    NqCode { graph, encoder }
}

/// Parses alist text.
///
/// # Safety
/// `alist` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nq_code_from_alist(alist: *const c_char, out: *mut *mut NqCode) -> NqStatus {
    guard(|| {
        let graph = parse_alist(text(alist, "alist")?).map_err(Error::from)?;
        publish(out, new_code(graph))
    })
}

/// Reads an alist file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nq_code_load_alist(path: *const c_char, out: *mut *mut NqCode) -> NqStatus {
    guard(|| {
        let graph = TannerGraph::load_alist(Path::new(text(path, "path")?))?;
        publish(out, new_code(graph))
    })
}

/// # Safety
/// `code` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nq_code_free(code: *mut NqCode) {
    if !code.is_null() {
        drop(Box::from_raw(code));
    }
}

/// Block length, or 0 for a null handle.
///
/// # Safety
/// `code` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nq_code_n(code: *const NqCode) -> usize {
    code.as_ref().map_or(0, |c| c.graph.n())
}

/// Message length `n - rank(H)`, or 0 for a null handle.
///
/// # Safety
/// `code` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nq_code_k(code: *const NqCode) -> usize {
    code.as_ref().map_or(0, |c| c.encoder.k())
}

/// Number of parity checks, or 0 for a null handle.
///
/// # Safety
/// `code` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nq_code_m(code: *const NqCode) -> usize {
    code.as_ref().map_or(0, |c| c.graph.m())
}

/// Encodes `k` message bits into `n` codeword bits.
///
/// # Safety
/// `message` must hold `message_len` bytes and `codeword` `codeword_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nq_code_encode(
    code: *const NqCode,
    message: *const u8,
    message_len: usize,
    codeword: *mut u8,
    codeword_len: usize,
) -> NqStatus {
    guard(|| {
        let code = handle(code, "code")?;
        let message = slice(message, message_len, "message")?;
        let out = slice_mut(codeword, codeword_len, "codeword")?;
        expect_len(code.graph.n(), out.len())?;
        out.copy_from_slice(&code.encoder.encode(message)?);
        Ok(())
    })
}

/// Runs `iterations` flooding sum-product rounds on `n` channel LLRs and
/// writes hard decisions. Messages are clipped to `[-clip, clip]`.
///
/// # Safety
/// `llr` must hold `n` doubles and `bits` `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn nq_code_decode(
    code: *const NqCode,
    llr: *const f64,
    n: usize,
    iterations: usize,
    clip: f64,
    bits: *mut u8,
) -> NqStatus {
    guard(|| {
        let code = handle(code, "code")?;
        let llr = slice(llr, n, "llr")?;
        let out = slice_mut(bits, n, "bits")?;
        let cfg = DecoderConfig {
            iterations,
            clip,
            early_stop: false,
        };
        out.copy_from_slice(&decode_hard(&code.graph, llr, &cfg)?);
        Ok(())
    })
}

/// Writes 1 to `result` iff `bits` (length `n`) satisfies every check.
///
/// # Safety
/// `bits` must hold `n` bytes and `result` be writable.
#[no_mangle]
pub unsafe extern "C" fn nq_code_is_codeword(
    code: *const NqCode,
    bits: *const u8,
    n: usize,
    result: *mut i32,
) -> NqStatus {
    guard(|| {
        let code = handle(code, "code")?;
        let bits = slice(bits, n, "bits")?;
        expect_len(code.graph.n(), n)?;
        let result = result.as_mut().ok_or_else(|| null("result"))?;
        *result = i32::from(code.graph.is_codeword(bits));
        Ok(())
    })
}

/// Parses checkpoint JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nq_quantizer_from_json(json: *const c_char, out: *mut *mut NqQuantizer) -> NqStatus {
    guard(|| {
        let params = QuantizerParams::from_json(text(json, "json")?)?;
        publish(out, NqQuantizer { params })
    })
}

/// Reads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nq_quantizer_load(path: *const c_char, out: *mut *mut NqQuantizer) -> NqStatus {
    guard(|| {
        let params = QuantizerParams::load(Path::new(text(path, "path")?))?;
        publish(out, NqQuantizer { params })
    })
}

/// # Safety
/// `quantizer` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nq_quantizer_free(quantizer: *mut NqQuantizer) {
    if !quantizer.is_null() {
        drop(Box::from_raw(quantizer));
    }
}

/// Number of staircase levels, or 0 for a null handle.
///
/// # Safety
/// `quantizer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nq_quantizer_levels(quantizer: *const NqQuantizer) -> usize {
    quantizer.as_ref().map_or(0, |q| q.params.levels.len())
}

/// Applies the quantizer at `temperature` (0 gives the hard staircase).
///
/// # Safety
/// `input` and `output` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nq_quantizer_apply(
    quantizer: *const NqQuantizer,
    input: *const f64,
    len: usize,
    temperature: f64,
    output: *mut f64,
) -> NqStatus {
    guard(|| {
        let q = handle(quantizer, "quantizer")?;
        let input = slice(input, len, "input")?;
        let out = slice_mut(output, len, "output")?;
        if temperature.is_nan() || temperature < 0.0 {
            return Err(Failure(NqStatus::InvalidArgument, format!("temperature must be >= 0, got {temperature}")));
        }
        if let Some(i) = input.iter().position(|v| v.is_nan()) {
            return Err(Error::NanInput(format!("input[{i}]")).into());
        }
        out.copy_from_slice(&q.params.quantize_word(input, temperature));
        Ok(())
    })
}

/// Lloyd-Max design for a unit Gaussian source: `levels` reconstruction
/// points and `levels - 1` thresholds, ascending. `distortion` may be null.
///
/// # Safety
/// `points` must hold `levels` doubles and `thresholds` `levels - 1`.
#[no_mangle]
pub unsafe extern "C" fn nq_lloyd_design(
    levels: usize,
    points: *mut f64,
    thresholds: *mut f64,
    distortion: *mut f64,
) -> NqStatus {
    guard(|| {
        let q = lloyd::design(levels, lloyd::DEFAULT_TOL, lloyd::DEFAULT_MAX_ITER)?;
        slice_mut(points, levels, "points")?.copy_from_slice(&q.levels);
        slice_mut(thresholds, levels.saturating_sub(1), "thresholds")?.copy_from_slice(&q.thresholds);
        if let Some(d) = distortion.as_mut() {
            *d = q.distortion;
        }
        Ok(())
    })
}
