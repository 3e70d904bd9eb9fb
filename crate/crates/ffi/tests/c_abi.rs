use std::ffi::{CStr, CString};
use std::ptr;

use oddbound::data::{generate_pair, save_csv, SyntheticConfig};
use oddbound::nn::Mlp;
use oddbound_ffi::*;

fn last_error() -> String {
    let p = odd_last_error();
    if p.is_null() {
        return String::new();
    }
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(odd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn scalar_functions_match_library() {
    let mut out = 0.0;
    assert_eq!(unsafe { odd_concentration(2000, 2000, 0.01, &mut out) }, OddStatus::Ok);
    assert!((out - 0.07587).abs() < 1e-4);
    assert_eq!(unsafe { odd_concentration(0, 10, 0.01, &mut out) }, OddStatus::InvalidArgument);
    assert!(!last_error().is_empty());

    let z = [0.0; 4];
    assert_eq!(unsafe { odd_logistic_loss(z.as_ptr(), 4, 1, &mut out) }, OddStatus::Ok);
    assert!((out - 1.0).abs() < 1e-12);
    let z = [2.0, 0.0];
    assert_eq!(unsafe { odd_disagreement_loss(z.as_ptr(), 2, 0, &mut out) }, OddStatus::Ok);
    assert!((out - (1.0 + 2f64.exp()).ln() / 2f64.ln()).abs() < 1e-12);
    assert_ne!(unsafe { odd_logistic_loss(z.as_ptr(), 2, 5, &mut out) }, OddStatus::Ok);
}

#[test]
fn null_pointers_are_reported() {
    assert_eq!(unsafe { odd_concentration(10, 10, 0.1, ptr::null_mut()) }, OddStatus::NullPointer);
    assert!(last_error().contains("out"));
    let mut out = 0.0;
    assert_eq!(unsafe { odd_logistic_loss(ptr::null(), 2, 0, &mut out) }, OddStatus::NullPointer);
    let mut pair = ptr::null_mut();
    assert_eq!(unsafe { odd_pair_load_csv(ptr::null(), OddCsvMode::Features, &mut pair) }, OddStatus::NullPointer);
    assert!(pair.is_null());
    unsafe {
        odd_model_free(ptr::null_mut());
        odd_pair_free(ptr::null_mut());
    }
}

#[test]
fn missing_file_is_io_error() {
    let path = CString::new("/nonexistent/pair.csv").unwrap();
    let mut pair = ptr::null_mut();
    assert_eq!(unsafe { odd_pair_load_csv(path.as_ptr(), OddCsvMode::Features, &mut pair) }, OddStatus::Io);
    assert!(last_error().contains("nonexistent"));
}

#[test]
fn malformed_csv_is_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "domain,label,f0\n0,0,1.0\n2,0,1.0\n").unwrap();
    let mut pair = ptr::null_mut();
    let c = cpath(&path);
    assert_eq!(unsafe { odd_pair_load_csv(c.as_ptr(), OddCsvMode::Features, &mut pair) }, OddStatus::Parse);
    assert!(last_error().contains(":3:"));
}

#[test]
fn model_round_trip_predicts_like_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = Mlp::new(&[3, 5, 4], 9).unwrap();
    model.save(&path).unwrap();
    let c = cpath(&path);
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { odd_model_load(c.as_ptr(), &mut handle) }, OddStatus::Ok);
    let (mut i, mut o) = (0, 0);
    assert_eq!(unsafe { odd_model_dims(handle, &mut i, &mut o) }, OddStatus::Ok);
    assert_eq!((i, o), (3, 4));

    let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.37 - 2.0).collect();
    let mut preds = [0usize; 4];
    assert_eq!(unsafe { odd_model_predict(handle, x.as_ptr(), 4, 3, preds.as_mut_ptr()) }, OddStatus::Ok);
    let expected = model.predict(ndarray::ArrayView2::from_shape((4, 3), &x).unwrap()).unwrap();
    assert_eq!(preds.to_vec(), expected);
    assert_eq!(unsafe { odd_model_predict(handle, x.as_ptr(), 3, 4, preds.as_mut_ptr()) }, OddStatus::Shape);
    unsafe { odd_model_free(handle) };
}

#[test]
fn run_single_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.csv");
    let split = generate_pair(&SyntheticConfig { n_train: 80, n_val: 10, seed: 2, ..SyntheticConfig::default() }).unwrap();
    save_csv(&split.train, &path).unwrap();
    let c = cpath(&path);
    let mut pair = ptr::null_mut();
    assert_eq!(unsafe { odd_pair_load_csv(c.as_ptr(), OddCsvMode::Features, &mut pair) }, OddStatus::Ok);
    let (mut ns, mut nt, mut dim) = (0, 0, 0);
    assert_eq!(unsafe { odd_pair_sizes(pair, &mut ns, &mut nt, &mut dim) }, OddStatus::Ok);
    assert_eq!((ns, nt, dim), (80, 80, 2));

    let mut cfg = odd_single_config_default();
    assert_eq!(cfg.restarts, 30);
    assert!(odd_last_error().is_null());
    cfg.restarts = 2;
    cfg.critic_epochs = 20;
    let mut report = OddReport::default();
    assert_eq!(unsafe { odd_run_single(pair, &cfg, &mut report) }, OddStatus::Ok);
    assert_eq!(report.n_source, 40);
    assert_eq!(report.has_truth, 1);
    assert_eq!(report.valid == 1, report.predicted_accuracy_lower <= report.true_target_accuracy);
    assert!((report.discrepancy_full - report.discrepancy_nonoverlap - report.overlap_discrepancy).abs() < 1e-12);

    cfg.val_fraction = 1.5;
    assert_eq!(unsafe { odd_run_single(pair, &cfg, &mut report) }, OddStatus::InvalidArgument);
    unsafe { odd_pair_free(pair) };

    let (p, t) = ([0.7, 0.9], [0.8, 0.85]);
    let mut m = OddMetrics::default();
    assert_eq!(unsafe { odd_evaluate(p.as_ptr(), t.as_ptr(), 2, &mut m) }, OddStatus::Ok);
    assert!((m.mae - 0.075).abs() < 1e-12);
    assert_eq!((m.coverage, m.invalid), (0.5, 1));
    assert!((m.overestimation_mae - 0.05).abs() < 1e-12);
    assert_ne!(unsafe { odd_evaluate(p.as_ptr(), t.as_ptr(), 0, &mut m) }, OddStatus::Ok);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/oddbound.h")).unwrap();
    for name in [
        "odd_last_error", "odd_version", "odd_concentration", "odd_logistic_loss", "odd_disagreement_loss",
        "odd_model_load", "odd_model_free", "odd_model_dims", "odd_model_predict", "odd_pair_load_csv",
        "odd_pair_free", "odd_pair_sizes", "odd_single_config_default", "odd_run_single", "odd_evaluate",
        "ODD_STATUS_NULL_POINTER", "typedef struct OddModel OddModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
