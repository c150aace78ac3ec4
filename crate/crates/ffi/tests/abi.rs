use std::ffi::{CStr, CString};
use std::ptr;

use lmfn_ffi::*;

fn last_error() -> String {
    unsafe {
        let n = lmfn_last_error_message(ptr::null_mut(), 0);
        let mut buf = vec![0 as std::ffi::c_char; n];
        lmfn_last_error_message(buf.as_mut_ptr(), n);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn tiny() -> *mut LmfnModelHandle {
    let cfg =
        CString::new(r#"{"encoder_width": 4, "decoder_width": 4, "num_scales": 2, "num_rfdb": 2}"#)
            .unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { lmfn_model_new(cfg.as_ptr(), 3, &mut h) },
        LmfnStatus::Ok
    );
    assert!(!h.is_null());
    h
}

#[test]
fn create_query_and_free() {
    let h = tiny();
    let (mut count, mut multiple) = (0usize, 0usize);
    unsafe {
        assert_eq!(lmfn_model_param_count(h, &mut count), LmfnStatus::Ok);
        assert_eq!(lmfn_model_size_multiple(h, &mut multiple), LmfnStatus::Ok);
        lmfn_model_free(h);
        lmfn_model_free(ptr::null_mut());
    }
    let reference = lmfn::LmfnModel::new(
        lmfn::ModelConfig {
            encoder_width: 4,
            decoder_width: 4,
            num_scales: 2,
            num_rfdb: 2,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    assert_eq!(count, reference.total_param_count());
    assert_eq!(multiple, 4);
}

#[test]
fn forward_matches_the_library() {
    let h = tiny();
    let input: Vec<f32> = (0..3 * 8 * 12).map(|i| (i % 17) as f32 / 17.0).collect();
    let mut out = vec![0.0f32; input.len()];
    let status = unsafe { lmfn_model_forward(h, input.as_ptr(), 1, 8, 12, out.as_mut_ptr()) };
    assert_eq!(status, LmfnStatus::Ok);
    let x = lmfn::Tensor::from_vec([1, 3, 8, 12], input.clone()).unwrap();
    let reference = lmfn::LmfnModel::new(
        lmfn::ModelConfig {
            encoder_width: 4,
            decoder_width: 4,
            num_scales: 2,
            num_rfdb: 2,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    assert_eq!(out, reference.predict(&x).unwrap().data());

    let bad = unsafe { lmfn_model_forward(h, input.as_ptr(), 1, 6, 16, out.as_mut_ptr()) };
    assert_eq!(bad, LmfnStatus::Shape);
    assert!(last_error().contains("multiples of 4"), "{}", last_error());
    unsafe { lmfn_model_free(h) };
}

#[test]
fn deblur_keeps_odd_sizes() {
    let h = tiny();
    let (w, hgt) = (7usize, 5usize);
    let input = vec![0.25f32; w * hgt];
    let mut out = vec![-1.0f32; w * hgt];
    let status = unsafe { lmfn_deblur(h, input.as_ptr(), w, hgt, 1, out.as_mut_ptr()) };
    assert_eq!(status, LmfnStatus::Ok);
    assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    unsafe { lmfn_model_free(h) };
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let h = tiny();
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(lmfn_model_save(h, path.as_ptr()), LmfnStatus::Ok);
        assert_eq!(lmfn_model_load(path.as_ptr(), &mut back), LmfnStatus::Ok);
    }
    let input: Vec<f32> = (0..3 * 4 * 4).map(|i| i as f32 / 48.0).collect();
    let mut a = vec![0.0f32; input.len()];
    let mut b = vec![0.0f32; input.len()];
    unsafe {
        lmfn_model_forward(h, input.as_ptr(), 1, 4, 4, a.as_mut_ptr());
        lmfn_model_forward(back, input.as_ptr(), 1, 4, 4, b.as_mut_ptr());
        lmfn_model_free(h);
        lmfn_model_free(back);
    }
    assert_eq!(a, b);
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut h = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(
        unsafe { lmfn_model_load(missing.as_ptr(), &mut h) },
        LmfnStatus::Io
    );
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/model.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { lmfn_model_load(junk.as_ptr(), &mut h) },
        LmfnStatus::Checkpoint
    );

    let cfg = CString::new(r#"{"num_rfdbs": 2}"#).unwrap();
    assert_eq!(
        unsafe { lmfn_model_new(cfg.as_ptr(), 0, &mut h) },
        LmfnStatus::InvalidConfig
    );
    assert!(last_error().contains("num_rfdbs"));

    assert_eq!(
        unsafe { lmfn_model_new(ptr::null(), 0, ptr::null_mut()) },
        LmfnStatus::NullPointer
    );
    let mut n = 0usize;
    assert_eq!(
        unsafe { lmfn_model_param_count(ptr::null(), &mut n) },
        LmfnStatus::NullPointer
    );
}

#[test]
fn error_message_truncates_and_reports_length() {
    let mut n = 0usize;
    unsafe { lmfn_model_param_count(ptr::null(), &mut n) };
    let full = last_error();
    let mut buf = [1 as std::ffi::c_char; 4];
    let needed = unsafe { lmfn_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(needed, full.len() + 1);
    let short = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(short, &full[..3]);
}

#[test]
fn metrics_match_the_library() {
    let (w, h, c) = (12usize, 11usize, 3usize);
    let a: Vec<f32> = (0..w * h * c).map(|i| (i % 13) as f32 / 13.0).collect();
    let b: Vec<f32> = a.iter().map(|v| (v + 0.05).min(1.0)).collect();
    let (mut p, mut s) = (0.0f64, 0.0f64);
    unsafe {
        assert_eq!(
            lmfn_psnr(a.as_ptr(), b.as_ptr(), w, h, c, &mut p),
            LmfnStatus::Ok
        );
        assert_eq!(
            lmfn_ssim(a.as_ptr(), b.as_ptr(), w, h, c, &mut s),
            LmfnStatus::Ok
        );
    }
    let ia = lmfn::ImagePlane::from_values(w, h, c, a.clone()).unwrap();
    let ib = lmfn::ImagePlane::from_values(w, h, c, b.clone()).unwrap();
    assert_eq!(p, lmfn::metrics::psnr(&ia, &ib).unwrap());
    assert_eq!(s, lmfn::metrics::ssim(&ia, &ib).unwrap());
    let status = unsafe { lmfn_ssim(a.as_ptr(), b.as_ptr(), 4, 4, 1, &mut s) };
    assert_eq!(status, LmfnStatus::InvalidArgument);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(lmfn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
