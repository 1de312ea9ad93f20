use std::fs;
use std::path::Path;

use obalex::explain::{ExplainerConfig, Method};
use obalex::harness::{
    adapt, compare_masked_background, compare_strategies, evaluate, initial_net, load_split,
    run_experiment, DatasetSource, EvalSampling, ExperimentConfig, ExplanationSource,
};
use obalex::io::export_dataset;
use obalex::metric::{ActivationMap, Grid};
use obalex::net::{LayerKind, Strategy};
use obalex::synth::{generate, SynthSpec};

fn spec() -> SynthSpec {
    SynthSpec {
        image_size: 16,
        samples_per_class: 12,
        seed: 17,
        ..Default::default()
    }
}

fn config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(DatasetSource::Synthetic(spec()));
    c.explainers = vec![
        ExplainerConfig::default_for(Method::Occlusion),
        ExplainerConfig::default_for(Method::Gradcam),
    ];
    c.eval_sample_cap = 5;
    c.min_correct = 1;
    c.train.epochs = 3;
    c.train.seed = 4;
    c.seed = 6;
    c.adapt_epochs = 2;
    c.overlays = false;
    c
}

#[test]
fn zero_learning_rate_matches_eval_only() {
    let mut c = config();
    c.train.learning_rate = 0.0;
    c.train.epochs = 1;
    let outcome = run_experiment(&c, None).unwrap();
    let split = load_split(&c).unwrap();
    let net = initial_net(&c, &split).unwrap();
    let ids = &outcome.reports[0].eval_sample_ids;
    let idx: Vec<usize> = ids
        .iter()
        .map(|id| split.test.iter().position(|s| &s.image_id == id).unwrap())
        .collect();
    let eval = evaluate(
        Some(&net),
        &split.test,
        &idx,
        &ExplanationSource::Explainers(&outcome.explainers),
        c.min_correct,
    )
    .unwrap();
    let r = &outcome.reports[0];
    assert_eq!(r.accuracy, eval.accuracy);
    assert_eq!(r.mean_loss, eval.mean_loss);
    assert_eq!(r.avg_scores, eval.avg_scores);
    assert_eq!(outcome.model, net);
}

#[test]
fn reports_are_consistent_and_reproducible() {
    let c = config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outcomes: Vec<_> = dirs
        .iter()
        .map(|d| run_experiment(&c, Some(d.path())).unwrap())
        .collect();
    for name in ["report.json", "report.csv", "model.oblx"] {
        let read = |d: &Path| fs::read(d.join(name)).unwrap();
        assert_eq!(read(dirs[0].path()), read(dirs[1].path()), "{name}");
    }
    let reports = &outcomes[0].reports;
    assert_eq!(reports.len(), 3);
    for r in reports {
        let keys: Vec<&str> = r.avg_scores.keys().map(String::as_str).collect();
        assert_eq!(keys, ["gradcam", "occlusion"]);
        for s in r.avg_scores.values().flatten() {
            assert!((0.0..=1.0).contains(&s.avg_score));
        }
        assert_eq!(r.eval_sample_ids, reports[0].eval_sample_ids);
        assert_eq!(r.eval_sample_ids.len(), 5);
    }
}

#[test]
fn per_epoch_sampling_redraws() {
    let mut c = config();
    c.explainers = vec![ExplainerConfig::default_for(Method::Gradcam)];
    c.eval_sampling = EvalSampling::PerEpoch;
    c.train.epochs = 4;
    let outcome = run_experiment(&c, None).unwrap();
    let first = &outcome.reports[0].eval_sample_ids;
    assert!(outcome.reports.iter().any(|r| &r.eval_sample_ids != first));
}

#[test]
fn misclassified_eval_images_only_change_counts() {
    let c = config();
    let split = load_split(&c).unwrap();
    let net = initial_net(&c, &split).unwrap();
    let explainers = [ExplainerConfig::default_for(Method::Occlusion)];
    let source = ExplanationSource::Explainers(&explainers);
    let idx: Vec<usize> = (0..split.test.len()).collect();
    let base = evaluate(Some(&net), &split.test, &idx, &source, 1).unwrap();

    // Relabel copies so the net gets every one of them wrong.
    let mut test = split.test.clone();
    for s in split.test.iter().take(6) {
        let mut wrong = s.clone();
        wrong.image_id = format!("{}_wrong", s.image_id);
        wrong.label = 1 - net.predict(&s.image).unwrap().0;
        test.push(wrong);
    }
    let idx: Vec<usize> = (0..test.len()).collect();
    let more = evaluate(Some(&net), &test, &idx, &source, 1).unwrap();
    let (a, b) = (
        base.avg_scores["occlusion"].unwrap(),
        more.avg_scores["occlusion"].unwrap(),
    );
    assert_eq!(a.avg_score.to_bits(), b.avg_score.to_bits());
    assert_eq!(a.n_correct, b.n_correct);
    assert_eq!(b.n_total, a.n_total + 6);
}

#[test]
fn strategy_a_keeps_conv_layers_of_the_base_net() {
    let c = config();
    let split = load_split(&c).unwrap();
    let base = adapt(initial_net(&c, &split).unwrap(), &split, &c).unwrap();
    let series = compare_strategies(&base, &split, &[Strategy::A], &c, None).unwrap();
    assert_eq!(series.len(), 1);
    let model = &series[0].outcome.model;
    for (k, layer) in base.layers().iter().enumerate() {
        if matches!(layer.kind, LayerKind::Conv { .. }) {
            assert_eq!(model.params()[k], base.params()[k], "layer {k}");
        }
    }
}

#[test]
fn masking_with_full_masks_changes_nothing() {
    let mut samples = generate(&spec()).unwrap();
    for s in &mut samples {
        s.mask = ActivationMap::new(Grid::filled(16, 16, 1.0)).unwrap();
    }
    let data = tempfile::tempdir().unwrap();
    export_dataset(data.path(), &samples).unwrap();
    let mut c = config();
    c.dataset = DatasetSource::Directory(data.path().to_path_buf());
    let split = load_split(&c).unwrap();
    let out = tempfile::tempdir().unwrap();
    let pair = compare_masked_background(&split, &c, Some(out.path())).unwrap();
    assert_eq!(pair.original.reports, pair.masked.reports);
    assert_eq!(pair.original.model, pair.masked.model);
    let paired = fs::read_to_string(out.path().join("paired.csv")).unwrap();
    assert_eq!(paired.lines().count(), 4);
}
