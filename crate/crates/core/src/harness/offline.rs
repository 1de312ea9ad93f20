//! Eval-only pass over an on-disk dataset, with a saved model, precomputed
//! heatmaps, or both.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::write_final_maps;
use super::{
    eval_sample_indices, evaluate, write_report_files, EpochReport, EvalSampling,
    ExperimentReport, ExplanationSource, TOOLKIT_VERSION,
};
use crate::error::{Error, Result};
use crate::explain::ExplainerConfig;
use crate::io::{load_dataset, load_heatmap};
use crate::metric::{normalize_explanation, ExplanationMap};
use crate::net::TinyNet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Dataset directory (images/, masks/, labels.csv).
    pub dataset: PathBuf,
    /// Without a model every image counts as correctly classified.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Name to directory of `<image_id>.png` heatmaps.
    #[serde(default)]
    pub heatmaps: BTreeMap<String, PathBuf>,
    /// Explainers run against `model`.
    #[serde(default)]
    pub explainers: Vec<ExplainerConfig>,
    #[serde(default = "super::default_cap")]
    pub eval_sample_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "super::default_min_correct")]
    pub min_correct: usize,
    #[serde(default = "super::default_true")]
    pub overlays: bool,
}

impl EvaluateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_sample_cap == 0 {
            return Err(Error::InvalidConfig("eval_sample_cap must be >= 1".into()));
        }
        if self.heatmaps.is_empty() && self.explainers.is_empty() {
            return Err(Error::InvalidConfig(
                "nothing to score: give `heatmaps` or `explainers`".into(),
            ));
        }
        if !self.explainers.is_empty() && self.model.is_none() {
            return Err(Error::InvalidConfig("`explainers` need a `model`".into()));
        }
        for e in &self.explainers {
            e.validate()?;
            if self.heatmaps.contains_key(e.name()) {
                return Err(Error::InvalidConfig(format!(
                    "`{}` is both a heatmap set and an explainer",
                    e.name()
                )));
            }
        }
        Ok(())
    }
}

/// One epoch-0 report row. Heatmap columns come first, in name order.
pub fn evaluate_dataset(config: &EvaluateConfig, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let samples = load_dataset(&config.dataset)?;
    let net = config.model.as_ref().map(TinyNet::load).transpose()?;
    let eval_idx = eval_sample_indices(
        samples.len(),
        config.eval_sample_cap,
        EvalSampling::Fixed,
        config.seed,
        0,
    );

    let mut maps: Vec<(String, Vec<Option<ExplanationMap>>)> = Vec::new();
    for (name, dir) in &config.heatmaps {
        let mut per_image = vec![None; samples.len()];
        for &i in &eval_idx {
            let id = &samples[i].image_id;
            let file = load_heatmap(dir.join(format!("{id}.png")))?;
            per_image[i] = Some(normalize_explanation(&file.decode()));
        }
        maps.push((name.clone(), per_image));
    }

    let mut epoch = EpochReport {
        epoch: 0,
        accuracy: None,
        mean_loss: None,
        train_loss: None,
        avg_scores: BTreeMap::new(),
        empty_explanations: BTreeMap::new(),
        eval_sample_ids: eval_idx.iter().map(|&i| samples[i].image_id.clone()).collect(),
    };
    let mut score_names: Vec<String> = Vec::new();
    let mut resolved = Vec::new();

    if !maps.is_empty() {
        let eval = evaluate(
            net.as_ref(),
            &samples,
            &eval_idx,
            &ExplanationSource::Precomputed(&maps),
            config.min_correct,
        )?;
        epoch.accuracy = eval.accuracy;
        epoch.mean_loss = eval.mean_loss;
        epoch.avg_scores.extend(eval.avg_scores.clone());
        epoch.empty_explanations.extend(eval.empty_explanations.clone());
        score_names.extend(maps.iter().map(|(n, _)| n.clone()));
        if let Some(dir) = out_dir {
            let names: Vec<&str> = maps.iter().map(|(n, _)| n.as_str()).collect();
            write_final_maps(dir, &samples, &eval, &names, config.overlays)?;
        }
    }
    if let Some(net) = &net {
        if !config.explainers.is_empty() {
            let probe = &samples[0].image;
            resolved = config
                .explainers
                .iter()
                .map(|e| e.resolved(probe.height, probe.width, net))
                .collect();
            let eval = evaluate(
                Some(net),
                &samples,
                &eval_idx,
                &ExplanationSource::Explainers(&resolved),
                config.min_correct,
            )?;
            epoch.accuracy = eval.accuracy;
            epoch.mean_loss = eval.mean_loss;
            epoch.avg_scores.extend(eval.avg_scores.clone());
            epoch.empty_explanations.extend(eval.empty_explanations.clone());
            score_names.extend(resolved.iter().map(|e| e.name().to_string()));
            if let Some(dir) = out_dir {
                let names: Vec<&str> = resolved.iter().map(|e| e.name()).collect();
                write_final_maps(dir, &samples, &eval, &names, config.overlays)?;
            }
        }
    }

    let report = ExperimentReport {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config: serde_json::to_value(config).expect("config serializes"),
        explainers: resolved,
        score_names,
        epochs: vec![epoch],
    };
    if let Some(dir) = out_dir {
        write_report_files(dir, &report)?;
    }
    Ok(report)
}
