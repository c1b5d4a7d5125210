use std::ffi::{CStr, CString};
use std::ptr;

use crackseg::{Model, NetworkConfig, Tensor};
use crackseg_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cs_last_error()) }.to_str().unwrap().to_string()
}

fn micro_json() -> CString {
    CString::new(serde_json::to_string(&NetworkConfig::micro()).unwrap()).unwrap()
}

#[test]
fn scan_paths_round_trip() {
    let mut set = ptr::null_mut();
    let name = CString::new("sass").unwrap();
    unsafe {
        assert_eq!(cs_scan_paths_new(name.as_ptr(), 2, 2, 4, &mut set), CsStatus::Ok);
        assert_eq!(cs_scan_paths_count(set), 4);
        assert_eq!(cs_scan_paths_cells(set), 4);
        let mut buf = [0usize; 4];
        assert_eq!(cs_scan_paths_order(set, 0, buf.as_mut_ptr(), 4), CsStatus::Ok);
        assert_eq!(buf, [0, 2, 3, 1]);
        assert_eq!(cs_scan_paths_inverse(set, 0, buf.as_mut_ptr(), 4), CsStatus::Ok);
        assert_eq!(buf, [0, 3, 1, 2]);
        assert_eq!(cs_scan_paths_order(set, 0, buf.as_mut_ptr(), 3), CsStatus::InvalidArgument);
        assert!(last_error().contains("buffer"));
        assert_eq!(cs_scan_paths_order(set, 4, buf.as_mut_ptr(), 4), CsStatus::InvalidArgument);
        assert_eq!(cs_scan_paths_order(set, 0, ptr::null_mut(), 4), CsStatus::NullArgument);
        cs_scan_paths_free(set);
        assert_eq!(cs_scan_paths_count(ptr::null()), 0);
    }
}

#[test]
fn scan_path_errors() {
    let mut set = ptr::null_mut();
    let bad = CString::new("zigzag").unwrap();
    let good = CString::new("parallel").unwrap();
    unsafe {
        assert_eq!(cs_scan_paths_new(bad.as_ptr(), 2, 2, 4, &mut set), CsStatus::Config);
        assert!(last_error().contains("zigzag"));
        assert_eq!(cs_scan_paths_new(good.as_ptr(), 2, 2, 3, &mut set), CsStatus::Config);
        assert_eq!(cs_scan_paths_new(ptr::null(), 2, 2, 4, &mut set), CsStatus::NullArgument);
        assert_eq!(cs_scan_paths_new(good.as_ptr(), 2, 2, 4, ptr::null_mut()), CsStatus::NullArgument);
    }
    assert!(set.is_null());
}

#[test]
fn predict_matches_library() {
    let mut m = ptr::null_mut();
    let cfg = micro_json();
    let image = Tensor::from_fn([1, 3, 32, 32], |i| ((i * 37) % 101) as f64 / 100.0);
    let expect = Model::new(NetworkConfig::micro(), 5).unwrap().predict(&image).unwrap();
    let mut out = vec![0.0; 32 * 32];
    unsafe {
        assert_eq!(cs_model_new(cfg.as_ptr(), 5, &mut m), CsStatus::Ok);
        assert_eq!(cs_model_patch_size(m), 8);
        assert_eq!(cs_model_param_count(m), Model::new(NetworkConfig::micro(), 0).unwrap().param_count());
        assert_eq!(cs_model_predict(m, image.data().as_ptr(), 32, 32, out.as_mut_ptr()), CsStatus::Ok);
        assert_eq!(out.as_slice(), expect.data());
        assert_eq!(cs_model_predict(m, image.data().as_ptr(), 30, 32, out.as_mut_ptr()), CsStatus::Input);
        assert!(last_error().contains("multiples of 8"));
        cs_model_free(m);
    }
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let cfg = micro_json();
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    let image = vec![0.5; 3 * 16 * 16];
    let (mut pa, mut pb) = (vec![0.0; 256], vec![0.0; 256]);
    unsafe {
        assert_eq!(cs_model_new(cfg.as_ptr(), 9, &mut a), CsStatus::Ok);
        assert_eq!(cs_model_save(a, path.as_ptr()), CsStatus::Ok);
        assert_eq!(cs_model_load(path.as_ptr(), &mut b), CsStatus::Ok);
        assert_eq!(cs_model_predict(a, image.as_ptr(), 16, 16, pa.as_mut_ptr()), CsStatus::Ok);
        assert_eq!(cs_model_predict(b, image.as_ptr(), 16, 16, pb.as_mut_ptr()), CsStatus::Ok);
        assert_eq!(pa, pb);
        cs_model_free(a);
        cs_model_free(b);
        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(cs_model_load(missing.as_ptr(), &mut a), CsStatus::Io);
        let junk = CString::new("{\"embed_dim\": 0}").unwrap();
        assert_eq!(cs_model_new(junk.as_ptr(), 0, &mut a), CsStatus::Config);
        let unknown = CString::new("{\"width\": 3}").unwrap();
        assert_eq!(cs_model_new(unknown.as_ptr(), 0, &mut a), CsStatus::Config);
    }
}

#[test]
fn evaluate_two_by_two() {
    let probs = [0.9, 0.4, 0.6, 0.1];
    let masks = [1u8, 1, 0, 0];
    let sizes = [4usize];
    let grid = [0.5];
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(cs_evaluate(probs.as_ptr(), masks.as_ptr(), sizes.as_ptr(), 1, grid.as_ptr(), 1, &mut json), CsStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        cs_string_free(json);
        assert_eq!(v["f1"], 0.5);
        assert!((v["miou"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);

        assert_eq!(cs_evaluate(probs.as_ptr(), masks.as_ptr(), sizes.as_ptr(), 1, ptr::null(), 0, &mut json), CsStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        cs_string_free(json);
        assert_eq!(v["thresholds"].as_array().unwrap().len(), 99);

        let bad = [1u8, 2, 0, 0];
        assert_eq!(cs_evaluate(probs.as_ptr(), bad.as_ptr(), sizes.as_ptr(), 1, ptr::null(), 0, &mut json), CsStatus::Input);
        assert_eq!(cs_evaluate(probs.as_ptr(), masks.as_ptr(), sizes.as_ptr(), 1, grid.as_ptr(), 1, ptr::null_mut()), CsStatus::NullArgument);
        cs_string_free(ptr::null_mut());
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(cs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
