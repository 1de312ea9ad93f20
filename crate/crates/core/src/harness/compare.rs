use std::path::Path;

use super::report::csv_err;
use super::{
    initial_net, run_split, EpochReport, ExperimentConfig, ExperimentOutcome, RunOptions, Split,
};
use crate::error::{Error, Result};
use crate::net::{Strategy, TinyNet, TrainConfig};
use crate::seed::derive_seed;

const STREAM_ADAPT: u64 = 0x4144_4150;

/// Output-layer-only training for `config.adapt_epochs` epochs.
pub fn adapt(mut net: TinyNet, split: &Split, config: &ExperimentConfig) -> Result<TinyNet> {
    if config.adapt_epochs == 0 {
        return Ok(net);
    }
    let images: Vec<_> = split.train.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = split.train.iter().map(|s| s.label).collect();
    let cfg = TrainConfig {
        epochs: config.adapt_epochs,
        strategy: Strategy::A,
        seed: derive_seed(config.train.seed, STREAM_ADAPT, 0),
        ..config.train
    };
    net.train(&images, &labels, &cfg)?;
    Ok(net)
}

#[derive(Debug, Clone)]
pub struct StrategySeries {
    pub strategy: Strategy,
    pub outcome: ExperimentOutcome,
}

/// Runs one experiment per strategy, each from a clone of `base_net` with
/// identical seeds. Writes `strategy_<s>/` and `strategies.csv` under `out_dir`.
pub fn compare_strategies(
    base_net: &TinyNet,
    split: &Split,
    strategies: &[Strategy],
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<StrategySeries>> {
    if strategies.is_empty() {
        return Err(Error::InvalidConfig("no strategies to compare".into()));
    }
    let mut series = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let mut cfg = config.clone();
        cfg.train.strategy = strategy;
        let sub = out_dir.map(|d| d.join(format!("strategy_{}", strategy.as_str())));
        let outcome = run_split(
            base_net.clone(),
            split,
            &cfg,
            RunOptions::default(),
            sub.as_deref(),
        )?;
        series.push(StrategySeries { strategy, outcome });
    }
    if let Some(dir) = out_dir {
        let labeled: Vec<(String, &[EpochReport])> = series
            .iter()
            .map(|s| (s.strategy.as_str().to_string(), s.outcome.reports.as_slice()))
            .collect();
        write_side_by_side(&dir.join("strategies.csv"), config, &labeled)?;
    }
    Ok(series)
}

#[derive(Debug, Clone)]
pub struct MaskedComparison {
    pub original: ExperimentOutcome,
    pub masked: ExperimentOutcome,
}

/// Same initial net and seeds, trained once on original images and once on
/// background-masked ones. Both are evaluated on the original test images.
pub fn compare_masked_background(
    split: &Split,
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<MaskedComparison> {
    let net = initial_net(config, split)?;
    let original = run_split(
        net.clone(),
        split,
        config,
        RunOptions::default(),
        out_dir.map(|d| d.join("original")).as_deref(),
    )?;
    let masked = run_split(
        net,
        split,
        config,
        RunOptions {
            mask_training_background: true,
        },
        out_dir.map(|d| d.join("masked")).as_deref(),
    )?;
    if let Some(dir) = out_dir {
        write_side_by_side(
            &dir.join("paired.csv"),
            config,
            &[
                ("original".to_string(), original.reports.as_slice()),
                ("masked".to_string(), masked.reports.as_slice()),
            ],
        )?;
    }
    Ok(MaskedComparison { original, masked })
}

/// One row per epoch; per series `<label>_accuracy`, `<label>_mean_loss`
/// and `<label>_<explainer>_avgscore`.
fn write_side_by_side(
    path: &Path,
    config: &ExperimentConfig,
    series: &[(String, &[EpochReport])],
) -> Result<()> {
    let names: Vec<&str> = config.explainers.iter().map(|e| e.name()).collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["epoch".to_string()];
    for (label, _) in series {
        header.push(format!("{label}_accuracy"));
        header.push(format!("{label}_mean_loss"));
        for n in &names {
            header.push(format!("{label}_{n}_avgscore"));
        }
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let n_epochs = series.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in 0..n_epochs {
        let mut row = vec![e.to_string()];
        for (_, reports) in series {
            let r = reports.get(e);
            row.push(cell(r.and_then(|r| r.accuracy)));
            row.push(cell(r.and_then(|r| r.mean_loss)));
            for n in &names {
                row.push(cell(
                    r.and_then(|r| r.avg_scores.get(*n).cloned().flatten())
                        .map(|d| d.avg_score),
                ));
            }
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
