//! Evaluation metrics, KS separation charts, attention overlap, heatmaps.

pub mod heatmap;
pub mod ks;
pub mod overlap;
pub mod ranking;

use std::path::Path;

use rayon::prelude::*;

pub use heatmap::{export_heatmap, heatmap_image, normalize_map, COLORMAP};
pub use ks::{ks_chart, ks_exact, KsCurve};
pub use overlap::{attention_overlap_report, OverlapReport, SampleOverlap};
pub use ranking::{average_precision, macro_mean, per_class, ranked_classes, roc_auc, topk_accuracy};

use crate::autodiff::Tape;
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::icasc::confusing_class;
use crate::nn::{forward, Label, Params};

/// Model outputs over a dataset, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    /// Row-major `[N, C]` softmax or sigmoid outputs.
    pub probabilities: Vec<f64>,
    pub classes: usize,
}

impl Predictions {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.probabilities[n * self.classes..(n + 1) * self.classes]
    }

    /// Probability of each sample's (first) ground-truth class and of its
    /// confusing class.
    pub fn target_and_confusing(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let conf = confusing_class(&self.probabilities, self.classes, &self.labels)?;
        Ok(self
            .labels
            .iter()
            .zip(&conf)
            .enumerate()
            .map(|(n, (l, &c))| (self.row(n)[l.classes()[0]], self.row(n)[c]))
            .unzip())
    }
}

/// Forward passes over `dataset`; batches run in parallel.
pub fn predict(params: &Params, dataset: &Dataset, batch_size: usize) -> Result<Predictions> {
    let batches = batch_iter(dataset, batch_size, None, 0, false)?;
    let rows: Vec<Vec<f64>> = batches
        .par_iter()
        .map(|b| forward(&Tape::new(), params, &b.images).map(|r| r.probabilities))
        .collect::<Result<_>>()?;
    Ok(Predictions {
        ids: dataset.samples.iter().map(|s| s.id.clone()).collect(),
        labels: dataset.samples.iter().map(|s| s.label.clone()).collect(),
        probabilities: rows.concat(),
        classes: params.config.classes,
    })
}

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    /// Class id, or `all`.
    pub scope: String,
    pub value: f64,
}

impl MetricRow {
    pub fn all(metric: &str, value: f64) -> Self {
        Self {
            metric: metric.into(),
            scope: "all".into(),
            value,
        }
    }
}

/// Top-1 (and top-5 when there are at least 5 classes), per-class AP and AUC
/// with their macro means, and the KS statistic.
pub fn summarize(pred: &Predictions) -> Result<Vec<MetricRow>> {
    let c = pred.classes;
    let mut rows = vec![MetricRow::all("top1_accuracy", topk_accuracy(&pred.probabilities, c, &pred.labels, 1)?)];
    if c >= 5 {
        rows.push(MetricRow::all("top5_accuracy", topk_accuracy(&pred.probabilities, c, &pred.labels, 5)?));
    }
    for (name, values) in [
        ("average_precision", per_class(&pred.probabilities, c, &pred.labels, average_precision)?),
        ("auc", per_class(&pred.probabilities, c, &pred.labels, roc_auc)?),
    ] {
        for (k, v) in values.iter().enumerate() {
            if let Some(v) = v {
                rows.push(MetricRow {
                    metric: name.into(),
                    scope: k.to_string(),
                    value: *v,
                });
            }
        }
        if let Some(m) = macro_mean(&values) {
            rows.push(MetricRow::all(if name == "auc" { "macro_auc" } else { "mean_average_precision" }, m));
        }
    }
    if !pred.labels.is_empty() {
        let (t, f) = pred.target_and_confusing()?;
        let (ks, at) = ks_exact(&t, &f)?;
        rows.push(MetricRow::all("ks_exact", ks));
        rows.push(MetricRow::all("ks_threshold", at));
    }
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Writes `metric,class,value` rows; values use shortest round-trip formatting.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["metric", "class", "value"]).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([r.metric.as_str(), r.scope.as_str(), &r.value.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ks_csv(path: &Path, curve: &KsCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["threshold", "cdf_target", "cdf_conf", "gap"]).map_err(|e| csv_err(path, e))?;
    for i in 0..curve.thresholds.len() {
        w.write_record([
            curve.thresholds[i].to_string(),
            curve.cdf_target[i].to_string(),
            curve.cdf_confusing[i].to_string(),
            curve.gap[i].to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_overlap_csv(path: &Path, report: &OverlapReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["id", "target", "confusing", "l_as_last", "l_ac", "skipped"])
        .map_err(|e| csv_err(path, e))?;
    for s in &report.samples {
        w.write_record([
            s.id.clone(),
            s.target.to_string(),
            s.confusing.to_string(),
            s.separation_last.to_string(),
            s.consistency.to_string(),
            s.skipped.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::{generate_synth, SynthSpec};
    use crate::icasc::IcascConfig;
    use crate::nn::{build_model, ModelConfig};

    fn setup() -> (Params, Dataset) {
        let spec = SynthSpec {
            height: 16,
            width: 16,
            motif_size: 5,
            ..SynthSpec::default()
        };
        let ds = generate_synth(&spec, 3).unwrap();
        let cfg = ModelConfig {
            channels: vec![4, 8],
            input_size: (16, 16),
            input_channels: 1,
            classes: 4,
            ..ModelConfig::default()
        };
        (build_model(&cfg, 1).unwrap(), ds)
    }

    #[test]
    fn zero_head_model_skips_every_sample() {
        let (mut p, ds) = setup();
        p.set("head.weight", Tensor::zeros(&[8, 4])).unwrap();
        let r = attention_overlap_report(&p, &ds, &IcascConfig::default(), 5).unwrap();
        assert_eq!(r.skip_rate, 1.0);
        assert_eq!(r.samples.len(), 12);
    }

    #[test]
    fn evaluation_is_repeatable_and_batch_independent() {
        let (p, ds) = setup();
        let a = predict(&p, &ds, 5).unwrap();
        assert_eq!(a, predict(&p, &ds, 5).unwrap());
        let b = predict(&p, &ds, 12).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
        let r1 = attention_overlap_report(&p, &ds, &IcascConfig::default(), 4).unwrap();
        assert_eq!(r1, attention_overlap_report(&p, &ds, &IcascConfig::default(), 4).unwrap());
        let rows = summarize(&a).unwrap();
        assert!(rows.iter().any(|r| r.metric == "ks_exact"));
        assert!(rows.iter().all(|r| r.metric != "top5_accuracy"));
    }

    #[test]
    fn csv_files_have_expected_headers() {
        let (p, ds) = setup();
        let dir = tempfile::tempdir().unwrap();
        let rows = summarize(&predict(&p, &ds, 6).unwrap()).unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("metric,class,value\ntop1_accuracy,all,"));
        let curve = ks_chart(&[0.2, 0.9], &[0.1, 0.3], 5).unwrap();
        let kpath = dir.path().join("ks.csv");
        write_ks_csv(&kpath, &curve).unwrap();
        let text = std::fs::read_to_string(&kpath).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("threshold,cdf_target,cdf_conf,gap\n"));
    }
}
