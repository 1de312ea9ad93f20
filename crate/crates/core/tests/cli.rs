use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use obalex::explain::{explain, ExplainerConfig, Method};
use obalex::io::{
    export_dataset, load_dataset, load_heatmap, save_heatmap, save_image, save_mask, HeatmapFile,
    Image,
};
use obalex::metric::{ActivationMap, Grid};
use obalex::net::{toy_vgg, TinyNet, ToyVggOptions};
use obalex::synth::{generate, LabeledSample, SynthSpec};

fn obalex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obalex"))
        .args(args)
        .env("OBALEX_THREADS", "1")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_pair(dir: &Path, name: &str, mask: &[&[f64]], heat: &[&[f64]]) -> (String, String) {
    let m = dir.join(format!("{name}_mask.png"));
    let h = dir.join(format!("{name}_heat.png"));
    save_mask(&m, &ActivationMap::new(Grid::from_rows(mask)).unwrap()).unwrap();
    save_heatmap(&h, &HeatmapFile::encode(&Grid::from_rows(heat), name)).unwrap();
    (p(&m).to_string(), p(&h).to_string())
}

#[test]
fn score_full_disjoint_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (m, h) = write_pair(dir.path(), "full", &[&[1.0, 1.0], &[1.0, 1.0]], &[&[0.2, 1.0], &[0.0, 0.6]]);
    let out = obalex(&["score", "--mask", &m, "--heatmap", &h]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout_json(&out)["score"], 1.0);

    let (m, h) = write_pair(dir.path(), "disjoint", &[&[1.0, 0.0]], &[&[0.0, 1.0]]);
    let json_path = dir.path().join("s.json");
    let out = obalex(&["score", "--mask", &m, "--heatmap", &h, "--out", p(&json_path)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["score"], 0.0);
    assert_eq!(fs::read(&json_path).unwrap(), out.stdout);

    let (m, _) = write_pair(dir.path(), "small", &[&[1.0, 0.0]], &[&[1.0, 0.0]]);
    let (_, h) = write_pair(dir.path(), "big", &[&[1.0, 0.0, 0.0]], &[&[1.0, 0.5, 0.0]]);
    let out = obalex(&["score", "--mask", &m, "--heatmap", &h]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("1x2") && msg.contains("1x3"), "{msg}");
    let out = obalex(&["score", "--mask", &m, "--heatmap", &h, "--resample"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn unknown_flags_and_missing_files() {
    let out = obalex(&["score", "--mask", "a.png", "--heatmap", "b.png", "--weird"]);
    assert_eq!(out.status.code(), Some(2));
    let out = obalex(&["score", "--mask", "/nonexistent/a.png", "--heatmap", "/nonexistent/b.png"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/a.png"));
}

/// A saved model and an image on which occlusion finds some evidence.
fn explain_fixture(dir: &Path) -> (String, String) {
    let sample = generate(&SynthSpec {
        image_size: 16,
        samples_per_class: 1,
        noise_std: 0.0,
        seed: 2,
        ..Default::default()
    })
    .unwrap()
    .remove(0);
    let opts = ToyVggOptions {
        input_side: 16,
        ..Default::default()
    };
    let occlusion = ExplainerConfig::default_for(Method::Occlusion);
    let net: TinyNet = (0..50)
        .map(|seed| toy_vgg(&opts, seed).unwrap())
        .find(|net: &TinyNet| explain(&occlusion, net, &sample.image, 0).is_ok())
        .expect("some seed explains");
    let model = dir.join("net.oblx");
    let image = dir.join("img.png");
    net.save(&model).unwrap();
    save_image(&image, &sample.image).unwrap();
    save_mask(dir.join("img_mask.png"), &sample.mask).unwrap();
    (p(&model).to_string(), p(&image).to_string())
}

#[test]
fn explain_writes_normalized_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let (model, image) = explain_fixture(dir.path());
    let mask = dir.path().join("img_mask.png");
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for o in &outs {
        let out = obalex(&[
            "explain", "--model", &model, "--image", &image, "--method", "occlusion", "--class",
            "0", "--out", p(o), "--mask", p(&mask),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let json = stdout_json(&out);
        let s = json["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert!(Path::new(json["overlay"].as_str().unwrap()).exists());
    }
    for name in ["img_occlusion.png", "img_occlusion.json", "img_occlusion_overlay.png"] {
        assert_eq!(
            fs::read(outs[0].join(name)).unwrap(),
            fs::read(outs[1].join(name)).unwrap(),
            "{name}"
        );
    }
    let decoded = load_heatmap(outs[0].join("img_occlusion.png")).unwrap().decode();
    assert_eq!(decoded.max(), 1.0);
}

#[test]
fn explain_rejects_bad_methods_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (model, image) = explain_fixture(dir.path());
    let base = ["explain", "--model", &model, "--image", &image, "--class", "0", "--out", p(dir.path())];
    let mut typo = base.to_vec();
    typo.extend(["--method", "oclusion"]);
    let out = obalex(&typo);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    for m in ["occlusion", "gradcam", "gradcampp", "surrogate"] {
        assert!(msg.contains(m), "{msg}");
    }
    let mut wrong_flag = base.to_vec();
    wrong_flag.extend(["--method", "gradcam", "--patch", "3"]);
    assert_eq!(obalex(&wrong_flag).status.code(), Some(2));
}

#[test]
fn gen_data_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    fs::write(&cfg, r#"{"image_size": 16, "samples_per_class": 3, "seed": 1}"#).unwrap();
    let data = dir.path().join("data");
    let out = obalex(&["gen-data", "--config", p(&cfg), "--out", p(&data)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let samples = load_dataset(&data).unwrap();
    assert_eq!(samples.len(), 6);
    assert_eq!(fs::read_dir(data.join("images")).unwrap().count(), 6);
    assert_eq!(fs::read_dir(data.join("masks")).unwrap().count(), 6);

    fs::write(&cfg, r#"{"image_size": 16, "samples_per_clas": 3}"#).unwrap();
    let out = obalex(&["gen-data", "--config", p(&cfg), "--out", p(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("samples_per_clas"), "{}", stderr(&out));
}

#[test]
fn evaluate_matches_golden_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let heat = dir.path().join("heat");
    fs::create_dir_all(&heat).unwrap();
    let fixtures = [
        ("a", [[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0], [0.0, 0.0]]),
        ("b", [[1.0, 1.0], [0.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]]),
    ];
    let samples: Vec<LabeledSample> = fixtures
        .iter()
        .map(|(id, mask, h)| {
            save_heatmap(heat.join(format!("{id}.png")), &HeatmapFile::encode(&Grid::from_rows(h), id))
                .unwrap();
            LabeledSample {
                image_id: id.to_string(),
                image: Image::filled(2, 2, 1, 0.5),
                label: 0,
                mask: ActivationMap::new(Grid::from_rows(mask)).unwrap(),
            }
        })
        .collect();
    export_dataset(&data, &samples).unwrap();
    let cfg = dir.path().join("eval.json");
    let config = serde_json::json!({
        "dataset": data,
        "heatmaps": {"fixture": heat},
        "min_correct": 1,
        "overlays": false,
    });
    fs::write(&cfg, config.to_string()).unwrap();
    let out_dir = dir.path().join("out");
    let out = obalex(&["evaluate", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // Oracle: a scores 1/2, b scores 1, mean 3/4; no model, so no accuracy.
    assert_eq!(
        fs::read_to_string(out_dir.join("report.csv")).unwrap(),
        "epoch,accuracy,mean_loss,fixture_avgscore\n0,,,0.75\n"
    );

    let out = obalex(&["report", "--report", p(&out_dir.join("report.json"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out_dir.join("curves.png").exists());
}

#[test]
fn report_rejects_malformed_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("report.json");
    fs::write(&bad, "{\"epochs\": [").unwrap();
    let out = obalex(&["report", "--report", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_demo_names_bad_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("demo.json");
    fs::write(
        &cfg,
        r#"{"experiment": {"dataset": {"synthetic": {}}, "train": {"epochz": 2}}}"#,
    )
    .unwrap();
    let out = obalex(&["train-demo", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("experiment.train") && msg.contains("epochz"), "{msg}");
}
