//! Exercises the C ABI surface from Rust: handle lifecycle, status
//! codes, the error message channel, and a train/save/load/evaluate
//! round trip.

use std::ffi::{CStr, CString};
use std::ptr;

use sgmp_ffi::*;

fn c_path(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sgmp_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn dataset_lifecycle_and_errors() {
    unsafe {
        let mut ds: *mut SgmpDataset = ptr::null_mut();
        assert_eq!(sgmp_dataset_synth(5, 1, 0, 0.7, &mut ds), SgmpStatus::Ok);
        assert_eq!(sgmp_dataset_num_images(ds), 5);

        let dir = tempfile::tempdir().unwrap();
        let path = c_path(&dir.path().join("d.jsonl"));
        assert_eq!(sgmp_dataset_save(ds, path.as_ptr()), SgmpStatus::Ok);

        let mut loaded: *mut SgmpDataset = ptr::null_mut();
        assert_eq!(sgmp_dataset_load(path.as_ptr(), &mut loaded), SgmpStatus::Ok);
        assert_eq!(sgmp_dataset_num_images(loaded), 5);
        sgmp_dataset_free(loaded);
        sgmp_dataset_free(ds);

        // missing file -> Io plus a message
        let missing = CString::new("/nonexistent/x.jsonl").unwrap();
        let mut out: *mut SgmpDataset = ptr::null_mut();
        assert_eq!(sgmp_dataset_load(missing.as_ptr(), &mut out), SgmpStatus::Io);
        assert!(last_error().contains("/nonexistent/x.jsonl"));

        // invalid config -> Config
        assert_eq!(sgmp_dataset_synth(5, 1, 0, 1.5, &mut out), SgmpStatus::Config);
        assert!(last_error().contains("context_ambiguity"));

        // null pointers -> InvalidArgument, no crash
        assert_eq!(
            sgmp_dataset_synth(5, 1, 0, 0.5, ptr::null_mut()),
            SgmpStatus::InvalidArgument
        );
        assert_eq!(sgmp_dataset_save(ptr::null(), path.as_ptr()), SgmpStatus::InvalidArgument);
        sgmp_dataset_free(ptr::null_mut());
    }
}

#[test]
fn train_save_load_evaluate_round_trip() {
    unsafe {
        let mut ds: *mut SgmpDataset = ptr::null_mut();
        assert_eq!(sgmp_dataset_synth(8, 3, 0, 0.7, &mut ds), SgmpStatus::Ok);

        let mut model: *mut SgmpModel = ptr::null_mut();
        assert_eq!(
            sgmp_train(ds, 3, 2, 0, 1e-3, 3, &mut model),
            SgmpStatus::Ok
        );
        assert!(sgmp_model_num_params(model) > 0);

        let dir = tempfile::tempdir().unwrap();
        let path = c_path(&dir.path().join("m.ckpt"));
        assert_eq!(sgmp_model_save(model, path.as_ptr()), SgmpStatus::Ok);

        let mut loaded: *mut SgmpModel = ptr::null_mut();
        assert_eq!(sgmp_model_load(path.as_ptr(), &mut loaded), SgmpStatus::Ok);
        assert_eq!(sgmp_model_num_params(loaded), sgmp_model_num_params(model));

        let mut a = SgmpEvalResult {
            r_at_50: -1.0,
            r_at_100: -1.0,
            images_evaluated: 0,
            images_skipped: 0,
        };
        let mut b = a;
        assert_eq!(sgmp_evaluate(model, ds, 0, 2, 0, &mut a), SgmpStatus::Ok);
        assert_eq!(sgmp_evaluate(loaded, ds, 0, 2, 0, &mut b), SgmpStatus::Ok);
        assert_eq!(a, b);
        assert!(a.images_evaluated > 0);
        assert!((0.0..=1.0).contains(&a.r_at_50));

        let mut text: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(sgmp_evaluate_report(model, ds, 0, 2, 0, &mut text), SgmpStatus::Ok);
        let report = CStr::from_ptr(text).to_string_lossy().into_owned();
        assert!(report.contains("task: predcls"), "{report}");
        assert!(report.contains("r_at_50:"), "{report}");
        sgmp_string_free(text);

        // another dataset with the same vocabulary still evaluates
        let mut other: *mut SgmpDataset = ptr::null_mut();
        assert_eq!(sgmp_dataset_synth(3, 3, 4, 0.7, &mut other), SgmpStatus::Ok);
        assert_eq!(sgmp_evaluate(model, other, 0, 2, 0, &mut a), SgmpStatus::Ok);
        sgmp_dataset_free(other);

        // bad enum values
        assert_eq!(
            sgmp_evaluate(model, ds, 9, 2, 0, &mut a),
            SgmpStatus::InvalidArgument
        );
        assert_eq!(
            sgmp_evaluate(model, ds, 0, 2, 9, &mut a),
            SgmpStatus::InvalidArgument
        );

        sgmp_model_free(loaded);
        sgmp_model_free(model);
        sgmp_dataset_free(ds);
    }
}

#[test]
fn grad_check_over_ffi() {
    unsafe {
        let mut err = f64::NAN;
        assert_eq!(sgmp_grad_check(2, 0, 11, &mut err), SgmpStatus::Ok);
        assert!(err.is_finite() && err < 1e-4);
    }
}

#[test]
fn header_is_generated() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("sgmp.h");
    let text = std::fs::read_to_string(&header).expect("header exists");
    for sym in [
        "sgmp_dataset_synth",
        "sgmp_train",
        "sgmp_evaluate",
        "sgmp_model_free",
        "sgmp_last_error",
        "SgmpEvalResult",
        "SgmpStatus",
    ] {
        assert!(text.contains(sym), "header missing {sym}");
    }
}
