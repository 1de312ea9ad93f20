use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochReport, Evaluation};
use crate::error::{Error, Result};
use crate::explain::ExplainerConfig;
use crate::io::{render_overlay, save_heatmap, save_overlay, HeatmapFile};
use crate::synth::LabeledSample;

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub toolkit_version: String,
    /// Echo of the config that produced the run.
    pub config: serde_json::Value,
    /// Resolved hyperparameters of the explainers that were run.
    pub explainers: Vec<ExplainerConfig>,
    /// Keys of `avg_scores`, in column order.
    pub score_names: Vec<String>,
    pub epochs: Vec<EpochReport>,
}

impl ExperimentReport {
    pub fn explainer_names(&self) -> Vec<String> {
        self.score_names.clone()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `epoch,accuracy,mean_loss,<name>_avgscore,...`; null values are empty cells.
pub fn write_epoch_csv(path: &Path, names: &[String], epochs: &[EpochReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["epoch".to_string(), "accuracy".into(), "mean_loss".into()];
    header.extend(names.iter().map(|n| format!("{n}_avgscore")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in epochs {
        let mut row = vec![r.epoch.to_string(), opt(r.accuracy), opt(r.mean_loss)];
        for n in names {
            row.push(opt(r.avg_scores.get(n).cloned().flatten().map(|d| d.avg_score)));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report_files(dir: &Path, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    write_epoch_csv(&dir.join("report.csv"), &report.explainer_names(), &report.epochs)
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Plain-text table of the per-epoch curves.
pub fn render_table(report: &ExperimentReport) -> String {
    let names = report.explainer_names();
    let mut header = vec!["epoch".to_string(), "accuracy".into(), "mean_loss".into()];
    header.extend(names.iter().cloned());
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut rows = vec![header];
    for r in &report.epochs {
        let mut row = vec![r.epoch.to_string(), fmt(r.accuracy), fmt(r.mean_loss)];
        for n in &names {
            row.push(fmt(r.avg_scores.get(n).cloned().flatten().map(|d| d.avg_score)));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s:>w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Heatmaps (and overlays) of the final epoch's explained images.
pub(crate) fn write_final_maps(
    dir: &Path,
    test: &[LabeledSample],
    eval: &Evaluation,
    names: &[&str],
    overlays: bool,
) -> Result<()> {
    for (k, name) in names.iter().enumerate() {
        let heat_dir = dir.join("heatmaps").join(name);
        let over_dir = dir.join("overlays").join(name);
        fs::create_dir_all(&heat_dir).map_err(|e| Error::io(&heat_dir, e))?;
        if overlays {
            fs::create_dir_all(&over_dir).map_err(|e| Error::io(&over_dir, e))?;
        }
        for im in &eval.images {
            let Some(Some((map, s))) = im.explanations.get(k) else {
                continue;
            };
            let sample = &test[im.index];
            let file = format!("{}.png", sample.image_id);
            save_heatmap(
                heat_dir.join(&file),
                &HeatmapFile::encode(map.grid(), &sample.image_id),
            )?;
            if overlays {
                let overlay = render_overlay(&sample.image, map, &sample.mask, Some(*s))?;
                save_overlay(over_dir.join(&file), &overlay)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::DatasetScore;
    use std::collections::BTreeMap;

    fn epoch(e: usize, s: Option<f64>) -> EpochReport {
        let mut avg = BTreeMap::new();
        avg.insert(
            "occlusion".to_string(),
            s.map(|v| DatasetScore {
                avg_score: v,
                n_correct: 5,
                n_total: 6,
            }),
        );
        EpochReport {
            epoch: e,
            accuracy: Some(0.5),
            mean_loss: Some(0.25),
            train_loss: None,
            avg_scores: avg,
            empty_explanations: BTreeMap::new(),
            eval_sample_ids: vec![],
        }
    }

    #[test]
    fn csv_null_cells_are_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_epoch_csv(&p, &["occlusion".into()], &[epoch(0, Some(0.75)), epoch(1, None)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "epoch,accuracy,mean_loss,occlusion_avgscore\n0,0.5,0.25,0.75\n1,0.5,0.25,\n"
        );
    }

    #[test]
    fn table_marks_nulls() {
        let report = ExperimentReport {
            toolkit_version: "x".into(),
            config: serde_json::Value::Null,
            explainers: vec![ExplainerConfig::default_for(crate::explain::Method::Occlusion)],
            score_names: vec!["occlusion".into()],
            epochs: vec![epoch(0, None)],
        };
        let t = render_table(&report);
        assert!(t.lines().nth(1).unwrap().ends_with('-'), "{t}");
    }
}
