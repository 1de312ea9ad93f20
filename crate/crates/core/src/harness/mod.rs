//! Experiment runner: per-epoch accuracy, loss and average alignment score
//! per explainer, freezing-strategy comparisons, and original-vs-masked
//! background training.
//!
//! Alignment is always measured on the test split. Each epoch explains up to
//! `eval_sample_cap` test images, targeting the predicted class, and only the
//! correctly classified ones enter the average.

mod compare;
mod offline;
pub mod plot;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{explain, ExplainerConfig, Method};
use crate::io::{load_dataset, Image};
use crate::metric::{avg_score, score, DatasetScore, ExplanationMap, ScoredImage};
use crate::net::{argmax, toy_vgg, TinyNet, ToyVggOptions, TrainConfig};
use crate::seed::derive_seed;
use crate::synth::{generate, mask_background, mask_seed, LabeledSample, SynthSpec};

pub use compare::{
    adapt, compare_masked_background, compare_strategies, MaskedComparison, StrategySeries,
};
pub use offline::{evaluate_dataset, EvaluateConfig};
pub use report::{
    read_report, render_table, write_epoch_csv, write_report_files, ExperimentReport,
};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

const STREAM_SPLIT: u64 = 0x5350_4c54;
const STREAM_EVAL: u64 = 0x4556_414c;
const STREAM_NET: u64 = 0x4e45_5420;
const STREAM_EPOCH: u64 = 0x4550_4f43;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SynthSpec),
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSampling {
    /// Same eval images every epoch.
    Fixed,
    /// Re-drawn every epoch.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_explainers")]
    pub explainers: Vec<ExplainerConfig>,
    #[serde(default = "default_cap")]
    pub eval_sample_cap: usize,
    #[serde(default = "default_sampling")]
    pub eval_sampling: EvalSampling,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    /// Fewer correctly classified eval images than this reports a null score.
    #[serde(default = "default_min_correct")]
    pub min_correct: usize,
    /// Output-layer-only epochs before strategy comparisons.
    #[serde(default = "default_adapt_epochs")]
    pub adapt_epochs: usize,
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default = "default_true")]
    pub overlays: bool,
}

fn default_train_fraction() -> f64 {
    0.7
}
fn default_explainers() -> Vec<ExplainerConfig> {
    vec![ExplainerConfig::default_for(Method::Occlusion)]
}
fn default_cap() -> usize {
    50
}
fn default_sampling() -> EvalSampling {
    EvalSampling::Fixed
}
fn default_min_correct() -> usize {
    5
}
fn default_adapt_epochs() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            dataset,
            train_fraction: default_train_fraction(),
            explainers: default_explainers(),
            eval_sample_cap: default_cap(),
            eval_sampling: default_sampling(),
            train: TrainConfig::default(),
            seed: 0,
            min_correct: default_min_correct(),
            adapt_epochs: default_adapt_epochs(),
            num_classes: None,
            overlays: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.eval_sample_cap == 0 {
            return Err(Error::InvalidConfig("eval_sample_cap must be >= 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.explainers {
            e.validate()?;
            if !seen.insert(e.name()) {
                return Err(Error::InvalidConfig(format!(
                    "explainer `{}` listed twice",
                    e.name()
                )));
            }
        }
        self.train.validate()
    }
}

/// One point on the per-epoch curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Test accuracy; absent when no classifier was evaluated.
    pub accuracy: Option<f64>,
    /// Mean test cross-entropy in nats.
    pub mean_loss: Option<f64>,
    /// Mean training loss of the epoch, when training happened.
    pub train_loss: Option<f64>,
    /// Null when too few eval images were classified correctly.
    pub avg_scores: BTreeMap<String, Option<DatasetScore>>,
    /// Correctly classified eval images whose explanation had no mass.
    pub empty_explanations: BTreeMap<String, usize>,
    pub eval_sample_ids: Vec<String>,
}

/// Train/test partition.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

pub fn load_samples(source: &DatasetSource) -> Result<Vec<LabeledSample>> {
    let samples = match source {
        DatasetSource::Synthetic(spec) => generate(spec)?,
        DatasetSource::Directory(dir) => load_dataset(dir)?,
    };
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(samples)
}

/// Stratified seeded split: `round(fraction * n_class)` of each class trains.
pub fn split_samples(samples: Vec<LabeledSample>, fraction: f64, seed: u64) -> Result<Split> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_label.entry(s.label).or_default().push(i);
    }
    let mut is_train = vec![false; samples.len()];
    for (&label, idx) in &mut by_label {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT, label as u64));
        idx.shuffle(&mut rng);
        let n_train = (fraction * idx.len() as f64).round() as usize;
        for &i in idx.iter().take(n_train) {
            is_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in samples.into_iter().zip(is_train) {
        if t {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Split { train, test })
}

pub fn load_split(config: &ExperimentConfig) -> Result<Split> {
    split_samples(
        load_samples(&config.dataset)?,
        config.train_fraction,
        config.seed,
    )
}

/// Freshly initialized toy-vgg sized for the split's images.
pub fn initial_net(config: &ExperimentConfig, split: &Split) -> Result<TinyNet> {
    let first = &split.train[0].image;
    if first.height != first.width {
        return Err(Error::InvalidConfig(format!(
            "toy-vgg needs square images, got {}x{}",
            first.height, first.width
        )));
    }
    let max_label = split
        .train
        .iter()
        .chain(&split.test)
        .map(|s| s.label)
        .max()
        .unwrap_or(0);
    let num_classes = config.num_classes.unwrap_or((max_label + 1).max(2));
    let opts = ToyVggOptions {
        input_channels: first.channels,
        input_side: first.height,
        num_classes,
        ..Default::default()
    };
    toy_vgg(&opts, derive_seed(config.seed, STREAM_NET, 0))
}

/// Test-image ids scored at `epoch`, sorted by id.
pub fn eval_sample_indices(
    n_test: usize,
    cap: usize,
    sampling: EvalSampling,
    seed: u64,
    epoch: usize,
) -> Vec<usize> {
    let draw = match sampling {
        EvalSampling::Fixed => 0,
        EvalSampling::PerEpoch => epoch as u64 + 1,
    };
    let mut idx: Vec<usize> = (0..n_test).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_EVAL, draw));
    idx.shuffle(&mut rng);
    idx.truncate(cap.min(n_test));
    idx.sort_unstable();
    idx
}

/// Explanation results for one eval image.
#[derive(Debug, Clone)]
pub struct ImageEval {
    pub index: usize,
    pub predicted: usize,
    pub correct: bool,
    /// Per explainer: the map and its score, or `None` for an empty map.
    pub explanations: Vec<Option<(ExplanationMap, f64)>>,
}

/// Source of explanations during evaluation.
pub enum ExplanationSource<'a> {
    Explainers(&'a [ExplainerConfig]),
    /// Precomputed maps per explainer name, indexed like the test set.
    Precomputed(&'a [(String, Vec<Option<ExplanationMap>>)]),
}

/// Accuracy, loss and alignment on one test set.
pub struct Evaluation {
    pub accuracy: Option<f64>,
    pub mean_loss: Option<f64>,
    pub avg_scores: BTreeMap<String, Option<DatasetScore>>,
    pub empty_explanations: BTreeMap<String, usize>,
    pub images: Vec<ImageEval>,
}

/// Evaluates `net` on `test`. Without a net, every image counts as correctly
/// classified (useful for scoring precomputed heatmaps).
pub fn evaluate(
    net: Option<&TinyNet>,
    test: &[LabeledSample],
    eval_idx: &[usize],
    source: &ExplanationSource<'_>,
    min_correct: usize,
) -> Result<Evaluation> {
    let (accuracy, mean_loss, predictions) = match net {
        Some(net) => {
            let preds = test
                .par_iter()
                .map(|s| net.probabilities(&s.image))
                .collect::<Result<Vec<_>>>()?;
            let mut correct = 0usize;
            let mut loss = 0.0;
            let labels: Vec<usize> = preds
                .iter()
                .zip(test)
                .map(|(p, s)| {
                    let (label, _) = argmax(p);
                    if label == s.label {
                        correct += 1;
                    }
                    loss += -p.get(s.label).copied().unwrap_or(0.0).max(f64::MIN_POSITIVE).ln();
                    label
                })
                .collect();
            let n = test.len() as f64;
            (Some(correct as f64 / n), Some(loss / n), labels)
        }
        None => (None, None, test.iter().map(|s| s.label).collect()),
    };

    let names: Vec<String> = match source {
        ExplanationSource::Explainers(cfgs) => cfgs.iter().map(|c| c.name().to_string()).collect(),
        ExplanationSource::Precomputed(maps) => maps.iter().map(|(n, _)| n.clone()).collect(),
    };

    let images = eval_idx
        .par_iter()
        .map(|&i| {
            let sample = &test[i];
            let predicted = predictions[i];
            let correct = predicted == sample.label;
            let mut explanations = Vec::with_capacity(names.len());
            if correct {
                for k in 0..names.len() {
                    let map = match source {
                        ExplanationSource::Explainers(cfgs) => {
                            let net = net.expect("explainers need a network");
                            match explain(&cfgs[k], net, &sample.image, predicted) {
                                Ok(m) => Some(m),
                                Err(Error::EmptyExplanation) => None,
                                Err(e) => return Err(e),
                            }
                        }
                        ExplanationSource::Precomputed(maps) => {
                            maps[k].1[i].clone().filter(|m| !m.is_empty())
                        }
                    };
                    let scored = match map {
                        Some(m) => {
                            let s = score(&sample.mask, &m)?;
                            Some((m, s))
                        }
                        None => None,
                    };
                    explanations.push(scored);
                }
            }
            Ok(ImageEval {
                index: i,
                predicted,
                correct,
                explanations,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut avg_scores = BTreeMap::new();
    let mut empty_explanations = BTreeMap::new();
    for (k, name) in names.iter().enumerate() {
        let mut scored = Vec::new();
        let mut empty = 0usize;
        for im in &images {
            let id = test[im.index].image_id.clone();
            if !im.correct {
                scored.push(ScoredImage {
                    image_id: id,
                    score: 0.0,
                    correctly_classified: false,
                });
                continue;
            }
            match &im.explanations[k] {
                Some((_, s)) => scored.push(ScoredImage {
                    image_id: id,
                    score: *s,
                    correctly_classified: true,
                }),
                None => empty += 1,
            }
        }
        let summary = match avg_score(&scored) {
            Ok(d) if d.n_correct >= min_correct => Some(d),
            Ok(d) => {
                log::warn!(
                    "{name}: only {} correctly classified eval images (< {min_correct}); reporting null",
                    d.n_correct
                );
                None
            }
            Err(Error::NoCorrectClassifications) => {
                log::warn!("{name}: no correctly classified eval images; reporting null");
                None
            }
            Err(e) => return Err(e),
        };
        avg_scores.insert(name.clone(), summary);
        empty_explanations.insert(name.clone(), empty);
    }
    Ok(Evaluation {
        accuracy,
        mean_loss,
        avg_scores,
        empty_explanations,
        images,
    })
}

/// Output of [`run_split`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<EpochReport>,
    pub model: TinyNet,
    /// Resolved explainer hyperparameters.
    pub explainers: Vec<ExplainerConfig>,
}

/// Options that vary between runs sharing one config.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Replace training-image backgrounds with noise before training.
    pub mask_training_background: bool,
}

/// Trains `net` epoch by epoch on `split.train` and evaluates after each
/// epoch. Writes reports under `out_dir` when given.
pub fn run_split(
    mut net: TinyNet,
    split: &Split,
    config: &ExperimentConfig,
    options: RunOptions,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let masked: Vec<LabeledSample>;
    let train_set: &[LabeledSample] = if options.mask_training_background {
        masked = split
            .train
            .iter()
            .enumerate()
            .map(|(i, s)| mask_background(s, mask_seed(config.seed, i)))
            .collect();
        &masked
    } else {
        &split.train
    };
    let images: Vec<&Image> = train_set.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = train_set.iter().map(|s| s.label).collect();
    let probe = &split.test[0].image;
    let explainers: Vec<ExplainerConfig> = config
        .explainers
        .iter()
        .map(|e| e.resolved(probe.height, probe.width, &net))
        .collect();

    let mut reports = Vec::with_capacity(config.train.epochs);
    let mut last_eval = None;
    for epoch in 0..config.train.epochs {
        let epoch_cfg = TrainConfig {
            epochs: 1,
            seed: derive_seed(config.train.seed, STREAM_EPOCH, epoch as u64),
            ..config.train
        };
        let stats = net.train(&images, &labels, &epoch_cfg)?;
        let eval_idx = eval_sample_indices(
            split.test.len(),
            config.eval_sample_cap,
            config.eval_sampling,
            config.seed,
            epoch,
        );
        let eval = evaluate(
            Some(&net),
            &split.test,
            &eval_idx,
            &ExplanationSource::Explainers(&explainers),
            config.min_correct,
        )?;
        log::info!(
            "epoch {epoch}: accuracy {:.3} loss {:.4}",
            eval.accuracy.unwrap_or(f64::NAN),
            eval.mean_loss.unwrap_or(f64::NAN)
        );
        reports.push(EpochReport {
            epoch,
            accuracy: eval.accuracy,
            mean_loss: eval.mean_loss,
            train_loss: stats.first().map(|s| s.mean_loss),
            avg_scores: eval.avg_scores.clone(),
            empty_explanations: eval.empty_explanations.clone(),
            eval_sample_ids: eval_idx.iter().map(|&i| split.test[i].image_id.clone()).collect(),
        });
        last_eval = Some(eval);
    }

    if let Some(dir) = out_dir {
        let report = ExperimentReport {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            explainers: explainers.clone(),
            score_names: explainers.iter().map(|e| e.name().to_string()).collect(),
            epochs: reports.clone(),
        };
        write_report_files(dir, &report)?;
        net.save(dir.join("model.oblx"))?;
        if let Some(eval) = &last_eval {
            let names: Vec<&str> = explainers.iter().map(|e| e.name()).collect();
            report::write_final_maps(dir, &split.test, eval, &names, config.overlays)?;
        }
    }
    Ok(ExperimentOutcome {
        reports,
        model: net,
        explainers,
    })
}

/// Loads the dataset, builds a fresh net and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let split = load_split(config)?;
    let net = initial_net(config, &split)?;
    run_split(net, &split, config, RunOptions::default(), out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Placement;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(DatasetSource::Synthetic(SynthSpec {
            samples_per_class: 10,
            image_size: 16,
            placement: Placement::InObject,
            ..Default::default()
        }));
        c.train.epochs = 2;
        c.eval_sample_cap = 4;
        c.min_correct = 1;
        c.explainers = vec![ExplainerConfig::default_for(Method::Gradcam)];
        c
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let samples = generate(&SynthSpec {
            samples_per_class: 10,
            ..Default::default()
        })
        .unwrap();
        let a = split_samples(samples.clone(), 0.7, 3).unwrap();
        let b = split_samples(samples, 0.7, 3).unwrap();
        assert_eq!(a.train.len(), 14);
        assert_eq!(a.test.len(), 6);
        assert_eq!(a.test.iter().filter(|s| s.label == 0).count(), 3);
        let ids = |s: &[LabeledSample]| s.iter().map(|x| x.image_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.test), ids(&b.test));
    }

    #[test]
    fn eval_sampling_modes() {
        let fixed: Vec<_> = (0..3)
            .map(|e| eval_sample_indices(100, 10, EvalSampling::Fixed, 1, e))
            .collect();
        assert!(fixed.windows(2).all(|w| w[0] == w[1]));
        let per: Vec<_> = (0..3)
            .map(|e| eval_sample_indices(100, 10, EvalSampling::PerEpoch, 1, e))
            .collect();
        assert_ne!(per[0], per[1]);
        assert_eq!(eval_sample_indices(3, 50, EvalSampling::Fixed, 1, 0), vec![0, 1, 2]);
    }

    #[test]
    fn keys_match_explainers() {
        let mut c = tiny_config();
        c.explainers = vec![
            ExplainerConfig::default_for(Method::Gradcam),
            ExplainerConfig::default_for(Method::Gradcampp),
        ];
        let out = run_experiment(&c, None).unwrap();
        assert_eq!(out.reports.len(), 2);
        for r in &out.reports {
            let keys: Vec<_> = r.avg_scores.keys().cloned().collect();
            assert_eq!(keys, vec!["gradcam".to_string(), "gradcampp".to_string()]);
            for s in r.avg_scores.values().flatten() {
                assert!((0.0..=1.0).contains(&s.avg_score));
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.train_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.explainers.push(ExplainerConfig::default_for(Method::Gradcam));
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.eval_sample_cap = 0;
        assert!(c.validate().is_err());
    }
}
