//! Drives the C ABI the way a foreign binding would: everything through
//! raw pointers and status codes.

use std::ffi::{CStr, CString};
use std::ptr;

use taskmix::arch::{ArchitectureDescriptor, ModelParams};
use taskmix::checkpoint;
use taskmix_ffi::*;

fn desc() -> ArchitectureDescriptor {
    ArchitectureDescriptor::new(6, vec![8], 6)
}

fn write_pair(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let base = ModelParams::init(desc(), 1).unwrap();
    let raw_ft = ModelParams::init(desc(), 2).unwrap();
    let ft = taskmix::taskvec::canonicalize(&base, &raw_ft).unwrap();
    let base_path = dir.join("base.ckpt");
    let ft_path = dir.join("ft.ckpt");
    checkpoint::save_params(&base, "pre", &base_path).unwrap();
    checkpoint::save_params(&ft, "db0", &ft_path).unwrap();
    (base_path, ft_path)
}

fn c_path(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(taskmix_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_extract_merge_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (base_path, ft_path) = write_pair(dir.path());

    unsafe {
        let mut base: *mut TaskmixModel = ptr::null_mut();
        let mut ft: *mut TaskmixModel = ptr::null_mut();
        assert_eq!(
            taskmix_model_load(c_path(&base_path).as_ptr(), &mut base),
            TaskmixStatus::Ok
        );
        assert_eq!(
            taskmix_model_load(c_path(&ft_path).as_ptr(), &mut ft),
            TaskmixStatus::Ok
        );
        assert_eq!(taskmix_model_layer_count(base), 3);
        assert_eq!(taskmix_model_input_dim(base), 6);
        assert!(taskmix_model_param_count(base) > 0);

        let id = CString::new("db0").unwrap();
        let mut tv: *mut TaskmixTaskVector = ptr::null_mut();
        assert_eq!(
            taskmix_task_vector_extract(base, ft, id.as_ptr(), &mut tv),
            TaskmixStatus::Ok
        );

        // Unit coefficients rebuild the fine-tuned model's predictions.
        let layer_count = taskmix_model_layer_count(base);
        let coeffs = vec![1.0; layer_count];
        let tvs = [tv as *const TaskmixTaskVector];
        let mut merged: *mut TaskmixModel = ptr::null_mut();
        assert_eq!(
            taskmix_merge(base, tvs.as_ptr(), 1, coeffs.as_ptr(), &mut merged),
            TaskmixStatus::Ok
        );

        let features: Vec<f64> = (0..4 * 6).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut from_merged = vec![0.0; 4];
        let mut from_ft = vec![0.0; 4];
        assert_eq!(
            taskmix_model_predict(merged, features.as_ptr(), 4, 6, from_merged.as_mut_ptr()),
            TaskmixStatus::Ok
        );
        assert_eq!(
            taskmix_model_predict(ft, features.as_ptr(), 4, 6, from_ft.as_mut_ptr()),
            TaskmixStatus::Ok
        );
        assert_eq!(from_merged, from_ft);

        // Delta save/load keeps working through the ABI.
        let tv_path = dir.path().join("db0.tv");
        assert_eq!(
            taskmix_task_vector_save(tv, base, c_path(&tv_path).as_ptr()),
            TaskmixStatus::Ok
        );
        let mut tv2: *mut TaskmixTaskVector = ptr::null_mut();
        assert_eq!(
            taskmix_task_vector_load(c_path(&tv_path).as_ptr(), &mut tv2),
            TaskmixStatus::Ok
        );

        taskmix_task_vector_free(tv2);
        taskmix_task_vector_free(tv);
        taskmix_model_free(merged);
        taskmix_model_free(ft);
        taskmix_model_free(base);
    }
}

#[test]
fn training_through_the_abi_runs_and_returns_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let (base_path, ft_path) = write_pair(dir.path());
    unsafe {
        let mut base: *mut TaskmixModel = ptr::null_mut();
        let mut ft: *mut TaskmixModel = ptr::null_mut();
        taskmix_model_load(c_path(&base_path).as_ptr(), &mut base);
        taskmix_model_load(c_path(&ft_path).as_ptr(), &mut ft);
        let id = CString::new("db0").unwrap();
        let mut tv: *mut TaskmixTaskVector = ptr::null_mut();
        taskmix_task_vector_extract(base, ft, id.as_ptr(), &mut tv);
        let tvs = [tv as *const TaskmixTaskVector];

        let count = 8;
        let dim = 6;
        let features: Vec<f64> = (0..count * dim)
            .map(|i| ((i * 31 % 17) as f64 - 8.0) / 4.0)
            .collect();
        let scores: Vec<f64> = (0..count).map(|i| 2.0 + (i as f64) * 0.8).collect();

        let mut profile = vec![0.0; 1];
        assert_eq!(
            taskmix_zero_shot_profile(
                base,
                tvs.as_ptr(),
                1,
                features.as_ptr(),
                scores.as_ptr(),
                count,
                dim,
                profile.as_mut_ptr()
            ),
            TaskmixStatus::Ok
        );
        assert!(profile[0].abs() <= 1.0);

        let cfg = TaskmixTrainConfig {
            temperature: 1.0,
            start_lr: 1e-2,
            end_lr: 1e-3,
            batch_size: 8,
            steps: 20,
            loss: 0,
            seed: 7,
        };
        let mut cm: *mut TaskmixCoefficients = ptr::null_mut();
        assert_eq!(
            taskmix_train_coefficients(
                base,
                tvs.as_ptr(),
                1,
                features.as_ptr(),
                scores.as_ptr(),
                count,
                dim,
                &cfg,
                &mut cm
            ),
            TaskmixStatus::Ok
        );
        assert_eq!(taskmix_coefficients_task_count(cm), 1);
        let layers = taskmix_coefficients_layer_count(cm);
        assert_eq!(layers, 3);
        let mut values = vec![0.0; layers];
        assert_eq!(
            taskmix_coefficients_values(cm, values.as_mut_ptr(), layers),
            TaskmixStatus::Ok
        );
        assert!(values.iter().all(|v| v.is_finite()));

        let mut personalized: *mut TaskmixModel = ptr::null_mut();
        assert_eq!(
            taskmix_merge_with_coefficients(base, tvs.as_ptr(), 1, cm, &mut personalized),
            TaskmixStatus::Ok
        );
        let mut preds = vec![0.0; count];
        assert_eq!(
            taskmix_model_predict(
                personalized,
                features.as_ptr(),
                count,
                dim,
                preds.as_mut_ptr()
            ),
            TaskmixStatus::Ok
        );
        let mut r = 0.0;
        assert_eq!(
            taskmix_srocc(scores.as_ptr(), preds.as_ptr(), count, &mut r),
            TaskmixStatus::Ok
        );
        assert!((-1.0..=1.0).contains(&r));

        taskmix_model_free(personalized);
        taskmix_coefficients_free(cm);
        taskmix_task_vector_free(tv);
        taskmix_model_free(ft);
        taskmix_model_free(base);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut out: *mut TaskmixModel = ptr::null_mut();
        let missing = CString::new("/definitely/not/here.ckpt").unwrap();
        let status = taskmix_model_load(missing.as_ptr(), &mut out);
        assert_eq!(status, TaskmixStatus::IoError);
        let msg = CStr::from_ptr(taskmix_last_error()).to_str().unwrap();
        assert!(!msg.is_empty());

        assert_eq!(
            taskmix_model_load(ptr::null(), &mut out),
            TaskmixStatus::NullArgument
        );

        // Degenerate metric input surfaces the dedicated code.
        let truth = [1.0, 1.0];
        let preds = [0.5, 0.7];
        let mut r = 0.0;
        assert_eq!(
            taskmix_srocc(truth.as_ptr(), preds.as_ptr(), 2, &mut r),
            TaskmixStatus::Ok
        );
        assert_eq!(r, 0.0);
        assert_eq!(
            taskmix_srocc(truth.as_ptr(), preds.as_ptr(), 1, &mut r),
            TaskmixStatus::ShapeError
        );
    }
}

#[test]
fn generated_header_exists_and_names_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/taskmix.h");
    let text = std::fs::read_to_string(header).expect("header generated by build script");
    for symbol in [
        "taskmix_model_load",
        "taskmix_task_vector_extract",
        "taskmix_merge",
        "taskmix_train_coefficients",
        "taskmix_srocc",
        "TASKMIX_STATUS_UNPERSONALIZABLE",
        "typedef struct TaskmixModel TaskmixModel",
    ] {
        assert!(text.contains(symbol), "header is missing {symbol}");
    }
}
