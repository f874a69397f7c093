use std::ffi::CStr;
use std::ptr;

use trajseg_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ts_last_error()) }.to_string_lossy().into_owned()
}

fn labels_of(seg: *const TsSegmentation) -> Vec<i64> {
    let (mut segments, mut frames) = (0usize, 0usize);
    assert_eq!(unsafe { ts_segmentation_shape(seg, &mut segments, &mut frames) }, TsStatus::Ok);
    let mut out = vec![0i64; frames];
    assert_eq!(unsafe { ts_segmentation_labels(seg, out.as_mut_ptr(), out.len()) }, TsStatus::Ok);
    out
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ts_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn labels_round_trip_through_a_handle() {
    let labels = [3i64, 3, 3, 1, 1, 2, 2, 2, 2];
    let mut seg = ptr::null_mut();
    assert_eq!(unsafe { ts_segmentation_from_labels(labels.as_ptr(), labels.len(), &mut seg) }, TsStatus::Ok);
    assert_eq!(labels_of(seg), labels);
    let mut b = [0usize; 2];
    assert_eq!(unsafe { ts_segmentation_boundaries(seg, b.as_mut_ptr(), b.len()) }, TsStatus::Ok);
    assert_eq!(b, [3, 5]);
    let mut small = [0usize; 1];
    assert_eq!(unsafe { ts_segmentation_boundaries(seg, small.as_mut_ptr(), 1) }, TsStatus::BufferTooSmall);
    assert!(last_error().contains("need 2"));
    unsafe { ts_segmentation_free(seg) };
    unsafe { ts_segmentation_free(ptr::null_mut()) };
}

#[test]
fn metrics_match_the_library() {
    let a = [0i64, 0, 1, 1, 2, 2];
    let mut v = 0.0;
    assert_eq!(unsafe { ts_nmi(a.as_ptr(), a.as_ptr(), a.len(), &mut v) }, TsStatus::Ok);
    assert_eq!(v, 1.0);

    let (mut truth, mut pred) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { ts_segmentation_from_boundaries(100, ptr::null(), 0, [7i64].as_ptr(), &mut truth) }, TsStatus::Ok);
    assert_eq!(
        unsafe { ts_segmentation_from_boundaries(100, [40usize].as_ptr(), 1, [1i64, 2].as_ptr(), &mut pred) },
        TsStatus::Ok
    );
    assert_eq!(unsafe { ts_seg_acc(pred, truth, 0.4, &mut v) }, TsStatus::Ok);
    assert_eq!(v, 0.6);
    unsafe {
        ts_segmentation_free(pred);
        ts_segmentation_free(truth);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut v = 0.0;
    assert_eq!(unsafe { ts_nmi(ptr::null(), [1i64].as_ptr(), 1, &mut v) }, TsStatus::NullPointer);
    assert!(last_error().contains("`a` is NULL"));

    let mut seg = ptr::null_mut();
    let status = unsafe { ts_segmentation_from_boundaries(10, [5usize, 3].as_ptr(), 2, [1i64, 2, 3].as_ptr(), &mut seg) };
    assert_eq!(status, TsStatus::InvalidSegmentation);
    assert!(seg.is_null());

    assert_eq!(unsafe { ts_seg_acc(ptr::null(), ptr::null(), 0.4, &mut v) }, TsStatus::NullPointer);
    // A success clears the message.
    assert_eq!(unsafe { ts_nmi([1i64].as_ptr(), [1i64].as_ptr(), 1, &mut v) }, TsStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn denoise_keeps_length_and_constants() {
    let x = vec![2.5f64; 300];
    let mut y = vec![0.0; 300];
    assert_eq!(unsafe { ts_denoise(x.as_ptr(), x.len(), 3, y.as_mut_ptr()) }, TsStatus::Ok);
    assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-9));
    assert_eq!(unsafe { ts_denoise(x.as_ptr(), x.len(), 0, y.as_mut_ptr()) }, TsStatus::InvalidArgument);
}

#[test]
fn tsc_then_promote() {
    // Two demos of three 1-D plateaus, stored row-major.
    let demo = |shift: usize| -> Vec<f64> {
        (0..150 + shift)
            .map(|t| {
                let level = if t < 50 { 0.0 } else if t < 100 + shift { 4.0 } else { 8.0 };
                level + 0.01 * ((t * 7919 % 13) as f64 - 6.0)
            })
            .collect()
    };
    let (d0, d1) = (demo(0), demo(5));
    let ptrs = [d0.as_ptr(), d1.as_ptr()];
    let rows = [d0.len(), d1.len()];
    let mut out = [ptr::null_mut(); 2];
    let status = unsafe { ts_tsc_segment(ptrs.as_ptr(), rows.as_ptr(), 2, 1, 0, out.as_mut_ptr()) };
    assert_eq!(status, TsStatus::Ok, "{}", last_error());
    for (seg, rows) in out.iter().zip(rows) {
        let (mut segments, mut frames) = (0, 0);
        unsafe { ts_segmentation_shape(*seg, &mut segments, &mut frames) };
        assert_eq!(frames, rows);
        assert!(segments >= 1);
    }

    let mut promoted = ptr::null_mut();
    let mut merges = usize::MAX;
    let status = unsafe { ts_promote(out[0], d0.as_ptr(), d0.len(), 1, 1.0, &mut promoted, &mut merges) };
    assert_eq!(status, TsStatus::Ok, "{}", last_error());
    assert_eq!(merges, 0);
    assert_eq!(labels_of(promoted), labels_of(out[0]));

    let status = unsafe { ts_promote(out[0], d0.as_ptr(), d0.len() - 1, 1, 0.5, &mut promoted, ptr::null_mut()) };
    assert_ne!(status, TsStatus::Ok);
    unsafe {
        ts_segmentation_free(promoted);
        out.iter().for_each(|&s| ts_segmentation_free(s));
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/trajseg.h");
    let source = include_str!("../src/lib.rs");
    let mut count = 0;
    for line in source.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from include/trajseg.h");
        count += 1;
    }
    assert!(count >= 12);
}
