use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use oac_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        oac_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn codec_round_trip_through_handles() {
    let mut codec = ptr::null_mut();
    assert_eq!(unsafe { oac_codec_new(5, 3, 1.0, &mut codec) }, OacStatus::Ok);
    assert_eq!(unsafe { oac_codec_digits(codec) }, 3);
    assert!((unsafe { oac_codec_step_size(codec) } - 2.0 / 124.0).abs() < 1e-15);

    let mut numerals = [0i32; 3];
    let mut clipped = true;
    let s = unsafe { oac_codec_encode(codec, 0.28, numerals.as_mut_ptr(), 3, &mut clipped) };
    assert_eq!(s, OacStatus::Ok);
    assert_eq!(numerals, [1, -2, 2]);
    assert!(!clipped);

    let mut v = 0.0;
    assert_eq!(unsafe { oac_codec_decode(codec, numerals.as_ptr(), 3, &mut v) }, OacStatus::Ok);
    assert!((v - 17.0 / 62.0).abs() < 1e-15);

    let s = unsafe { oac_codec_encode(codec, 0.1, numerals.as_mut_ptr(), 2, ptr::null_mut()) };
    assert_eq!(s, OacStatus::BufferTooSmall);
    let bad = [3i32, 0, 0];
    assert_ne!(unsafe { oac_codec_decode(codec, bad.as_ptr(), 3, &mut v) }, OacStatus::Ok);
    unsafe { oac_codec_free(codec) };
}

#[test]
fn invalid_arguments_report_status_and_message() {
    let mut codec = ptr::null_mut();
    assert_eq!(unsafe { oac_codec_new(4, 2, 0.1, &mut codec) }, OacStatus::Config);
    assert!(codec.is_null());
    assert!(last_error().contains("odd"), "{}", last_error());

    assert_eq!(unsafe { oac_codec_new(5, 2, 0.1, ptr::null_mut()) }, OacStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(unsafe { oac_codec_decode(ptr::null(), ptr::null(), 0, &mut v) }, OacStatus::NullPointer);
    assert!(unsafe { oac_codec_step_size(ptr::null()) }.is_nan());
    unsafe { oac_codec_free(ptr::null_mut()) };

    let mut link = ptr::null_mut();
    let cfg = CString::new("[codec]\nbase = \"five\"\n").unwrap();
    assert_eq!(unsafe { oac_link_new(cfg.as_ptr(), &mut link) }, OacStatus::Parse);
    assert!(last_error().contains("line 2"));
}

#[test]
fn link_round_matches_quantized_average_when_bypassed() {
    let cfg = CString::new("[codec]\nbase = 5\ndigits = 3\nv_max = 1.0\n[channel]\ndevices = 2\n").unwrap();
    let mut link = ptr::null_mut();
    assert_eq!(unsafe { oac_link_new(cfg.as_ptr(), &mut link) }, OacStatus::Ok);
    assert_eq!(unsafe { oac_link_devices(link) }, 2);
    assert_eq!(unsafe { oac_link_set_aggregation(link, OacAggregation::Quantized) }, OacStatus::Ok);

    let g = [0.28, -0.86];
    let mut est = [0.0];
    assert_eq!(unsafe { oac_link_round(link, g.as_ptr(), 2, 1, 7, est.as_mut_ptr()) }, OacStatus::Ok);
    assert!((est[0] + 0.2903225806451613).abs() < 1e-12, "{}", est[0]);

    assert_eq!(unsafe { oac_link_set_aggregation(link, OacAggregation::OverTheAir) }, OacStatus::Ok);
    let mut a = [0.0];
    let mut b = [0.0];
    unsafe {
        assert_eq!(oac_link_round(link, g.as_ptr(), 2, 1, 7, a.as_mut_ptr()), OacStatus::Ok);
        assert_eq!(oac_link_round(link, g.as_ptr(), 2, 1, 7, b.as_mut_ptr()), OacStatus::Ok);
    }
    assert_eq!(a, b);

    let three = [0.1, 0.2, 0.3];
    assert_eq!(unsafe { oac_link_round(link, three.as_ptr(), 3, 1, 7, a.as_mut_ptr()) }, OacStatus::Shape);
    unsafe { oac_link_free(link) };
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/oac.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["oac_codec_new", "oac_link_round", "oac_last_error_message", "OAC_STATUS_OK", "typedef struct OacCodec OacCodec"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"oac.h\"\nint main(void) { OacCodec *c = 0; return oac_codec_new(5, 2, 0.1, &c) == OAC_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .expect("run cc");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
