//! The C ABI driven from Rust, checked against the core crate.

use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use adired::backend::{load_model, BackendKind};
use adired::dismap::{normalize_map, ClassSource, DisMap};
use adired::regions::{select_regions, SelectionConfig};
use adired::svm::{self, TrainConfig};
use adired_ffi::*;
use image::{Rgb, RgbImage};
use ndarray::Array2;

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let n = unsafe { adired_last_error_message(ptr::null_mut(), 0) };
    assert!(n > 0, "no error recorded");
    let mut buf = vec![0 as c_char; n];
    assert_eq!(unsafe { adired_last_error_message(buf.as_mut_ptr(), n) }, n);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

/// Gray image with one black/white checkerboard and one red/cyan one.
fn scene() -> RgbImage {
    RgbImage::from_fn(112, 112, |x, y| {
        let on = (x + y) % 2 == 0;
        if (20..32).contains(&x) && (20..32).contains(&y) {
            if on { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) }
        } else if (70..82).contains(&x) && (60..72).contains(&y) {
            if on { Rgb([255, 0, 0]) } else { Rgb([0, 255, 255]) }
        } else {
            Rgb([128, 128, 128])
        }
    })
}

struct Net(*mut AdiredDisNet);

impl Drop for Net {
    fn drop(&mut self) {
        unsafe { adired_disnet_free(self.0) };
    }
}

fn load_net() -> Net {
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { adired_disnet_load(fixture("disnet.adirtoy").as_ptr(), &mut net) }, AdiredStatus::Ok);
    assert!(!net.is_null());
    Net(net)
}

#[test]
fn dismap_matches_core() {
    let net = load_net();
    let (mut l, mut k) = (0usize, 0usize);
    unsafe {
        assert_eq!(adired_disnet_grid_size(net.0, &mut l), AdiredStatus::Ok);
        assert_eq!(adired_disnet_num_classes(net.0, &mut k), AdiredStatus::Ok);
    }
    assert_eq!((l, k), (14, 4));

    let img = scene();
    let core = load_model(Path::new(fixture("disnet.adirtoy").to_str().unwrap()), BackendKind::DisNet)
        .unwrap()
        .into_disnet()
        .unwrap();
    let fwd = core.forward(&img).unwrap();
    for class in [-1i64, 0, 1, 3] {
        let mut out = vec![f64::NAN; l * l];
        let mut used = usize::MAX;
        let status = unsafe {
            adired_dismap_compute(net.0, img.as_raw().as_ptr(), 112, 112, class, out.as_mut_ptr(), out.len(), &mut used)
        };
        assert_eq!(status, AdiredStatus::Ok);
        let expected_class = if class < 0 { fwd.predicted_class } else { class as usize };
        assert_eq!(used, expected_class);
        let expected = DisMap::new(&fwd.activations, core.classifier(), expected_class, ClassSource::Predicted).unwrap();
        assert_eq!(out.as_slice(), expected.normalized.as_slice().unwrap());
    }
}

#[test]
fn dismap_rejects_bad_arguments() {
    let net = load_net();
    let img = scene();
    let mut out = vec![0.0; 14 * 14];
    let mut used = 0usize;
    let call = |class: i64, len: usize, out: *mut f64| unsafe {
        let mut used = 0usize;
        adired_dismap_compute(net.0, img.as_raw().as_ptr(), 112, 112, class, out, len, &mut used)
    };
    assert_eq!(call(9, out.len(), out.as_mut_ptr()), AdiredStatus::InvalidArgument);
    assert!(last_error().contains('9'));
    assert_eq!(call(0, 10, out.as_mut_ptr()), AdiredStatus::InvalidArgument);
    assert_eq!(call(0, out.len(), ptr::null_mut()), AdiredStatus::NullPointer);
    let status = unsafe {
        adired_dismap_compute(net.0, ptr::null(), 112, 112, 0, out.as_mut_ptr(), out.len(), &mut used)
    };
    assert_eq!(status, AdiredStatus::NullPointer);
    let status = unsafe {
        adired_dismap_compute(ptr::null(), img.as_raw().as_ptr(), 112, 112, 0, out.as_mut_ptr(), out.len(), &mut used)
    };
    assert_eq!(status, AdiredStatus::NullPointer);
}

#[test]
fn load_errors_map_to_status_codes() {
    let mut net = ptr::null_mut();
    let missing = CString::new("/nonexistent/disnet.adirtoy").unwrap();
    assert_eq!(unsafe { adired_disnet_load(missing.as_ptr(), &mut net) }, AdiredStatus::Io);
    assert!(net.is_null());
    assert!(last_error().contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.adirtoy");
    std::fs::write(&junk, "not a model\n").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { adired_disnet_load(junk.as_ptr(), &mut net) }, AdiredStatus::Parse);
    assert_eq!(unsafe { adired_disnet_load(ptr::null(), &mut net) }, AdiredStatus::NullPointer);
    assert_eq!(unsafe { adired_disnet_load(junk.as_ptr(), ptr::null_mut()) }, AdiredStatus::NullPointer);
}

#[test]
fn last_error_truncates_safely() {
    let mut net = ptr::null_mut();
    unsafe { adired_disnet_load(ptr::null(), &mut net) };
    let full = last_error();
    let mut buf = [1 as c_char; 4];
    let n = unsafe { adired_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, full.len() + 1);
    assert_eq!(buf[3], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), &full[..3]);
}

#[test]
fn normalize_matches_core_and_allows_aliasing() {
    let raw: Vec<f64> = (0..49).map(|i| ((i * 37) % 11) as f64 - 3.5).collect();
    let expected = normalize_map(&Array2::from_shape_vec((7, 7), raw.clone()).unwrap());
    let mut inplace = raw.clone();
    let p = inplace.as_mut_ptr();
    assert_eq!(unsafe { adired_normalize_map(p, inplace.len(), p) }, AdiredStatus::Ok);
    assert_eq!(inplace.as_slice(), expected.as_slice().unwrap());
    assert_eq!(unsafe { adired_normalize_map(ptr::null(), 3, p) }, AdiredStatus::NullPointer);
}

fn collect(set: *const AdiredRegionSet) -> Vec<AdiredPatch> {
    let n = unsafe { adired_region_set_len(set) };
    (0..n)
        .map(|i| {
            let mut p = AdiredPatch {
                left: 0,
                top: 0,
                side: 0,
                scale: AdiredScale::Coarse,
                score: 0.0,
            };
            assert_eq!(unsafe { adired_region_set_get(set, i, &mut p) }, AdiredStatus::Ok);
            p
        })
        .collect()
}

#[test]
fn select_regions_matches_core() {
    let l = 9;
    let grid: Vec<f64> = (0..l * l).map(|i| ((i * 53 + 7) % 97) as f64 * 255.0 / 96.0).collect();
    let normalized = Array2::from_shape_vec((l, l), grid.clone()).unwrap();
    let map = DisMap {
        raw: normalized.clone(),
        normalized,
        class_used: 0,
        class_source: ClassSource::Predicted,
    };
    for (tc, tf, fallback) in [(100.0, 150.0, false), (250.0, 254.0, true), (0.0, 0.0, false)] {
        let cfg = SelectionConfig {
            t_coarse: tc,
            t_fine: tf,
            fallback_on_empty: fallback,
        };
        let expected = select_regions(&map, &cfg, 200, 150, "x").unwrap();
        let mut set = ptr::null_mut();
        let status = unsafe { adired_select_regions(grid.as_ptr(), l, 200, 150, tc, tf, fallback, &mut set) };
        assert_eq!(status, AdiredStatus::Ok);
        let got = collect(set);
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected.patches) {
            assert_eq!((g.left, g.top, g.side, g.score), (e.left, e.top, e.side, e.score));
            assert_eq!(g.scale as u32, e.scale as u32);
        }
        let mut p = got.first().copied().unwrap_or(AdiredPatch {
            left: 0,
            top: 0,
            side: 0,
            scale: AdiredScale::Fine,
            score: 0.0,
        });
        assert_eq!(unsafe { adired_region_set_get(set, got.len(), &mut p) }, AdiredStatus::InvalidArgument);
        unsafe { adired_region_set_free(set) };
    }
    assert_eq!(unsafe { adired_region_set_len(ptr::null()) }, 0);
}

#[test]
fn select_regions_validates_input() {
    let mut set = ptr::null_mut();
    let bad = [0.0, 300.0, 5.0, 1.0];
    let s = unsafe { adired_select_regions(bad.as_ptr(), 2, 64, 64, 10.0, 10.0, false, &mut set) };
    assert_eq!(s, AdiredStatus::InvalidArgument);
    assert!(set.is_null());
    let nan = [f64::NAN; 9];
    let s = unsafe { adired_select_regions(nan.as_ptr(), 3, 64, 64, 10.0, 10.0, false, &mut set) };
    assert_eq!(s, AdiredStatus::InvalidArgument);
    let ok = [10.0; 9];
    let s = unsafe { adired_select_regions(ok.as_ptr(), 3, 0, 64, 10.0, 10.0, false, &mut set) };
    assert_eq!(s, AdiredStatus::Shape);
    let s = unsafe { adired_select_regions(ok.as_ptr(), 3, 64, 64, -1.0, 10.0, false, &mut set) };
    assert_eq!(s, AdiredStatus::InvalidArgument);
}

fn trained_svm(dir: &Path) -> (PathBuf, adired::svm::SvmModel, Vec<Vec<f64>>) {
    let xs: Vec<Vec<f64>> = (0..30)
        .map(|i| {
            let c = (i % 3) as f64;
            vec![c + 0.01 * i as f64, -c, 0.5 * (i % 2) as f64]
        })
        .collect();
    let labels: Vec<String> = (0..30).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
    let model = svm::train(&xs, &labels, &TrainConfig::default()).unwrap();
    let path = dir.join("m.svm");
    model.save(&path).unwrap();
    (path, model, xs)
}

#[test]
fn svm_predictions_match_core() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model, xs) = trained_svm(dir.path());
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { adired_svm_load(c_path.as_ptr(), &mut h) }, AdiredStatus::Ok);
    let (mut k, mut d) = (0usize, 0usize);
    unsafe {
        assert_eq!(adired_svm_num_classes(h, &mut k), AdiredStatus::Ok);
        assert_eq!(adired_svm_dim(h, &mut d), AdiredStatus::Ok);
    }
    assert_eq!((k, d), (3, 3));
    for x in &xs {
        let mut class = usize::MAX;
        assert_eq!(unsafe { adired_svm_predict(h, x.as_ptr(), x.len(), &mut class) }, AdiredStatus::Ok);
        assert_eq!(class, model.predict(x).unwrap());
    }
    let mut class = 0usize;
    assert_eq!(unsafe { adired_svm_predict(h, xs[0].as_ptr(), 2, &mut class) }, AdiredStatus::Shape);

    let mut need = 0usize;
    assert_eq!(unsafe { adired_svm_label(h, 1, ptr::null_mut(), 0, &mut need) }, AdiredStatus::Ok);
    assert_eq!(need, 2);
    let mut buf = [0 as c_char; 8];
    assert_eq!(unsafe { adired_svm_label(h, 1, buf.as_mut_ptr(), buf.len(), &mut need) }, AdiredStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "b");
    assert_eq!(unsafe { adired_svm_label(h, 3, buf.as_mut_ptr(), buf.len(), &mut need) }, AdiredStatus::InvalidArgument);
    unsafe { adired_svm_free(h) };

    std::fs::write(&path, b"garbage").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { adired_svm_load(c_path.as_ptr(), &mut h) }, AdiredStatus::Parse);
    assert!(h.is_null());
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        adired_disnet_free(ptr::null_mut());
        adired_region_set_free(ptr::null_mut());
        adired_svm_free(ptr::null_mut());
    }
}
