use std::ffi::{CStr, CString};
use std::ptr;

use obalex::io::{save_heatmap, save_mask, HeatmapFile};
use obalex::net::{toy_vgg, TinyNet, ToyVggOptions};
use obalex::{ActivationMap, Grid};
use obalex_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(obx_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(obx_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn score_hand_case() {
    unsafe {
        let mut mask = ptr::null_mut();
        let mut map = ptr::null_mut();
        assert_eq!(obx_mask_new(2, 2, [1.0, 0.0, 0.0, 1.0].as_ptr(), &mut mask), ObxStatus::Ok);
        assert_eq!(
            obx_explanation_normalize(2, 2, [0.5, 0.5, 0.0, 1.0].as_ptr(), &mut map),
            ObxStatus::Ok
        );
        let mut s = f64::NAN;
        assert_eq!(obx_score(mask, map, &mut s), ObxStatus::Ok);
        assert_eq!(s, 0.75);
        obx_mask_free(mask);
        obx_explanation_free(map);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut mask = ptr::null_mut();
        assert_eq!(
            obx_mask_new(1, 2, [1.5, 0.0].as_ptr(), &mut mask),
            ObxStatus::InvalidArgument
        );
        assert!(mask.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(obx_mask_new(1, 2, [1.0, 0.0].as_ptr(), &mut mask), ObxStatus::Ok);
        assert!(last_error().is_empty());
        let mut empty = ptr::null_mut();
        obx_explanation_normalize(1, 2, [0.0, -1.0].as_ptr(), &mut empty);
        let mut s = 0.0;
        assert_eq!(obx_score(mask, empty, &mut s), ObxStatus::EmptyExplanation);

        let mut wide = ptr::null_mut();
        obx_explanation_normalize(1, 3, [1.0, 0.0, 0.0].as_ptr(), &mut wide);
        assert_eq!(obx_score(mask, wide, &mut s), ObxStatus::ShapeMismatch);
        assert!(last_error().contains("1x2"), "{}", last_error());

        assert_eq!(obx_score(ptr::null(), wide, &mut s), ObxStatus::NullPointer);

        obx_mask_free(mask);
        obx_explanation_free(empty);
        obx_explanation_free(wide);
        obx_mask_free(ptr::null_mut());
    }
}

#[test]
fn avg_score_excludes_wrong() {
    let scores = [0.4, 0.9, 0.6];
    let correct = [1u8, 0, 1];
    let (mut avg, mut n) = (0.0, 0usize);
    unsafe {
        assert_eq!(
            obx_avg_score(scores.as_ptr(), correct.as_ptr(), 3, &mut avg, &mut n),
            ObxStatus::Ok
        );
        assert!((avg - 0.5).abs() < 1e-15);
        assert_eq!(n, 2);
        assert_eq!(
            obx_avg_score(scores.as_ptr(), [0u8; 3].as_ptr(), 3, &mut avg, &mut n),
            ObxStatus::NoCorrectClassifications
        );
    }
}

#[test]
fn files_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let mask_path = dir.path().join("m.png");
    let heat_path = dir.path().join("h.png");
    let model_path = dir.path().join("net.oblx");
    let grid = Grid::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
    save_mask(&mask_path, &ActivationMap::new(grid.clone()).unwrap()).unwrap();
    save_heatmap(&heat_path, &HeatmapFile::encode(&grid, "h")).unwrap();
    let opts = ToyVggOptions {
        input_side: 8,
        ..Default::default()
    };
    let net: TinyNet = toy_vgg(&opts, 1).unwrap();
    net.save(&model_path).unwrap();

    unsafe {
        let (mut mask, mut map, mut model) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(obx_mask_load_png(cpath(&mask_path).as_ptr(), &mut mask), ObxStatus::Ok);
        assert_eq!(
            obx_explanation_load_heatmap(cpath(&heat_path).as_ptr(), &mut map),
            ObxStatus::Ok
        );
        let mut s = 0.0;
        assert_eq!(obx_score(mask, map, &mut s), ObxStatus::Ok);
        assert_eq!(s, 1.0);

        assert_eq!(obx_model_load(cpath(&model_path).as_ptr(), &mut model), ObxStatus::Ok);
        let (mut c, mut h, mut w, mut k) = (0, 0, 0, 0);
        obx_model_input_shape(model, &mut c, &mut h, &mut w, &mut k);
        assert_eq!((c, h, w, k), (1, 8, 8, 2));

        let image: Vec<f64> = (0..64).map(|i| (i % 7) as f64 / 7.0).collect();
        let (mut class, mut p) = (9usize, 0.0);
        assert_eq!(
            obx_model_predict(model, image.as_ptr(), 8, 8, 1, &mut class, &mut p),
            ObxStatus::Ok
        );
        let (expected, ep) = net.predict(&obalex::io::Image::new(8, 8, 1, image.clone()).unwrap()).unwrap();
        assert_eq!((class, p), (expected, ep));

        let method = CString::new(r#"{"method":"occlusion","patch":2}"#).unwrap();
        let mut expl = ptr::null_mut();
        let status = obx_explain(model, image.as_ptr(), 8, 8, 1, method.as_ptr(), class, &mut expl);
        assert!(
            status == ObxStatus::Ok || status == ObxStatus::EmptyExplanation,
            "{status:?}"
        );
        if status == ObxStatus::Ok {
            let (mut eh, mut ew) = (0, 0);
            obx_explanation_dims(expl, &mut eh, &mut ew);
            let mut buf = vec![0.0; eh * ew];
            assert_eq!(obx_explanation_values(expl, buf.as_mut_ptr(), buf.len()), ObxStatus::Ok);
            assert_eq!(buf.iter().copied().fold(0.0, f64::max), 1.0);
            obx_explanation_free(expl);
        }

        let bad = CString::new("lime").unwrap();
        assert_eq!(
            obx_explain(model, image.as_ptr(), 8, 8, 1, bad.as_ptr(), 0, &mut expl),
            ObxStatus::InvalidArgument
        );
        assert!(last_error().contains("gradcampp"));

        let missing = CString::new("/nonexistent/net.oblx").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(obx_model_load(missing.as_ptr(), &mut none), ObxStatus::Io);

        obx_mask_free(mask);
        obx_explanation_free(map);
        obx_model_free(model);
    }
}
