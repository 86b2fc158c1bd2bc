//! C ABI over `oac-core`.
//!
//! Handles are opaque pointers created by `*_new` and released by `*_free`.
//! Every fallible call returns an [`OacStatus`]; on failure the message is
//! kept per thread and can be read with [`oac_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use oac_core::codec::{decode_numerals, encode_clipped, BalancedConfig, NumeralSequence};
use oac_core::config::ExperimentConfig;
use oac_core::link::{oac_round, AggregationMode, LinkConfig};
use oac_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OacStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Shape = 3,
    Domain = 4,
    Capacity = 5,
    Parse = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Other = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OacAggregation {
    OverTheAir = 0,
    Quantized = 1,
    Exact = 2,
}

/// Opaque balanced-numeral codec.
pub struct OacCodec {
    cfg: BalancedConfig,
}

/// Opaque aggregation link.
pub struct OacLink {
    cfg: LinkConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into_bytes());
}

fn status_of(e: &Error) -> OacStatus {
    match e {
        Error::Config(_) => OacStatus::Config,
        Error::Shape { .. } => OacStatus::Shape,
        Error::Domain(_) => OacStatus::Domain,
        Error::Capacity { .. } | Error::SearchTooLarge { .. } => OacStatus::Capacity,
        Error::Parse { .. } => OacStatus::Parse,
        _ => OacStatus::Other,
    }
}

fn fail(status: OacStatus, msg: impl Into<String>) -> OacStatus {
    set_error(msg.into());
    status
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), OacStatus>) -> OacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            OacStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(OacStatus::Panic, "internal panic"),
    }
}

fn core<T>(r: oac_core::Result<T>) -> Result<T, OacStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, OacStatus> {
    // SAFETY: callers pass either null or a pointer obtained from this library.
    unsafe { p.as_ref() }.ok_or_else(|| fail(OacStatus::NullPointer, format!("{what} is null")))
}

fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], OacStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(OacStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller guarantees `p` points to `len` readable elements.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], OacStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(OacStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller guarantees `p` points to `len` writable elements.
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn oac_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Create a codec for odd `base`, `digits` numerals and clip level `v_max`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn oac_codec_new(base: u32, digits: u32, v_max: f64, out: *mut *mut OacCodec) -> OacStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(OacStatus::NullPointer, "out is null"));
        }
        let cfg = core(BalancedConfig::new(base, digits, v_max))?;
        *out = Box::into_raw(Box::new(OacCodec { cfg }));
        Ok(())
    })
}

/// # Safety
/// `codec` must be null or a handle from [`oac_codec_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oac_codec_free(codec: *mut OacCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Quantization step of the codec, or NaN for a null handle.
///
/// # Safety
/// `codec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oac_codec_step_size(codec: *const OacCodec) -> f64 {
    codec.as_ref().map_or(f64::NAN, |c| c.cfg.step_size())
}

/// Number of numerals per value.
///
/// # Safety
/// `codec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oac_codec_digits(codec: *const OacCodec) -> usize {
    codec.as_ref().map_or(0, |c| c.cfg.digits())
}

/// Encode `value` into `out[0..len]`, most significant numeral first.
/// `clipped` may be null.
///
/// # Safety
/// `codec` must be a live handle, `out` must hold `len` integers.
#[no_mangle]
pub unsafe extern "C" fn oac_codec_encode(
    codec: *const OacCodec,
    value: f64,
    out: *mut i32,
    len: usize,
    clipped: *mut bool,
) -> OacStatus {
    guard(|| {
        let c = non_null(codec, "codec")?;
        if len < c.cfg.digits() {
            return Err(fail(
                OacStatus::BufferTooSmall,
                format!("need {} numerals, buffer holds {len}", c.cfg.digits()),
            ));
        }
        let (seq, clip) = core(encode_clipped(&c.cfg, value))?;
        slice_out(out, seq.len(), "out")?.copy_from_slice(seq.as_slice());
        if !clipped.is_null() {
            *clipped = clip;
        }
        Ok(())
    })
}

/// Decode `len` numerals (most significant first) into `*value`.
///
/// # Safety
/// `codec` must be a live handle, `numerals` must hold `len` integers.
#[no_mangle]
pub unsafe extern "C" fn oac_codec_decode(
    codec: *const OacCodec,
    numerals: *const i32,
    len: usize,
    value: *mut f64,
) -> OacStatus {
    guard(|| {
        let c = non_null(codec, "codec")?;
        if value.is_null() {
            return Err(fail(OacStatus::NullPointer, "value is null"));
        }
        let seq = core(NumeralSequence::new(&c.cfg, slice_in(numerals, len, "numerals")?.to_vec()))?;
        *value = core(decode_numerals(&c.cfg, &seq))?;
        Ok(())
    })
}

/// Build a link from an experiment config in TOML (`config` may be null or
/// empty for defaults).
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oac_link_new(config: *const c_char, out: *mut *mut OacLink) -> OacStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(OacStatus::NullPointer, "out is null"));
        }
        let text = if config.is_null() {
            ""
        } else {
            CStr::from_ptr(config)
                .to_str()
                .map_err(|e| fail(OacStatus::Parse, format!("config is not UTF-8: {e}")))?
        };
        let exp = core(ExperimentConfig::parse(text, "config", false))?;
        core(exp.validate())?;
        let cfg = core(exp.link_config())?;
        *out = Box::into_raw(Box::new(OacLink { cfg }));
        Ok(())
    })
}

/// # Safety
/// `link` must be null or a handle from [`oac_link_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oac_link_free(link: *mut OacLink) {
    if !link.is_null() {
        drop(Box::from_raw(link));
    }
}

/// Number of devices the link expects per round.
///
/// # Safety
/// `link` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oac_link_devices(link: *const OacLink) -> usize {
    link.as_ref().map_or(0, |l| l.cfg.channel.devices)
}

/// # Safety
/// `link` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn oac_link_set_aggregation(link: *mut OacLink, mode: OacAggregation) -> OacStatus {
    guard(|| {
        let l = link
            .as_mut()
            .ok_or_else(|| fail(OacStatus::NullPointer, "link is null"))?;
        l.cfg.mode = match mode {
            OacAggregation::OverTheAir => AggregationMode::OverTheAir,
            OacAggregation::Quantized => AggregationMode::Quantized,
            OacAggregation::Exact => AggregationMode::Exact,
        };
        Ok(())
    })
}

/// Aggregate one round. `gradients` is row-major `devices × len`; the
/// estimate of the average gradient is written to `estimate[0..len]`.
///
/// # Safety
/// `gradients` must hold `devices * len` doubles and `estimate` `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn oac_link_round(
    link: *const OacLink,
    gradients: *const f64,
    devices: usize,
    len: usize,
    seed: u64,
    estimate: *mut f64,
) -> OacStatus {
    guard(|| {
        let l = non_null(link, "link")?;
        let total = devices
            .checked_mul(len)
            .ok_or_else(|| fail(OacStatus::Shape, "devices * len overflows"))?;
        let flat = slice_in(gradients, total, "gradients")?;
        let rows: Vec<Vec<f64>> = if len == 0 {
            vec![Vec::new(); devices]
        } else {
            flat.chunks(len).map(<[f64]>::to_vec).collect()
        };
        let o = core(oac_round(&rows, &l.cfg, seed))?;
        slice_out(estimate, len, "estimate")?.copy_from_slice(&o.estimate);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_follow_error_class() {
        assert_eq!(status_of(&Error::Config("x".into())), OacStatus::Config);
        assert_eq!(
            status_of(&Error::Capacity {
                gradients: 1,
                required_symbols: 2,
                available_symbols: 1
            }),
            OacStatus::Capacity
        );
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(oac_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
