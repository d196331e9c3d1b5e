//! MAE, MSE, RMSE and R² per target in original units, their global
//! aggregates, and plot-ready prediction series.
//!
//! Global MAE, MSE and R² are arithmetic means of the three per-target values
//! and global RMSE is the square root of global MSE.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{predict, ModelParams};
use crate::pipeline::{Channel, Scaler, WindowedDataset, NUM_TARGETS};

/// Samples per forward call; also the unit of parallel work, so serial and
/// parallel evaluation run identical batches.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// NaN (serialized as `null`) when the targets have zero variance.
    #[serde(with = "nan_as_null")]
    pub r2: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl Metrics {
    pub fn r2_defined(&self) -> bool {
        self.r2.is_finite()
    }
}

/// Metrics of one target from predictions and truths in the same units.
pub fn target_metrics(predictions: &[f64], truth: &[f64]) -> Result<Metrics> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(Error::invalid(format!(
            "{} predictions for {} targets",
            predictions.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let (mut abs, mut sse, mut sst) = (0.0, 0.0, 0.0);
    for (&p, &t) in predictions.iter().zip(truth) {
        let e = p - t;
        abs += e.abs();
        sse += e * e;
        sst += (t - mean) * (t - mean);
    }
    let mse = sse / n;
    Ok(Metrics {
        mae: abs / n,
        mse,
        rmse: mse.sqrt(),
        r2: if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
    })
}

/// Per-target metrics from normalized `n × 3` predictions and targets,
/// both mapped back to original units with `scaler` first.
pub fn per_target_metrics(predictions: &[f64], targets: &[f64], scaler: &Scaler) -> Result<[Metrics; NUM_TARGETS]> {
    if predictions.len() != targets.len() || !targets.len().is_multiple_of(NUM_TARGETS) {
        return Err(Error::invalid(format!(
            "{} predictions vs {} targets (must be equal multiples of {NUM_TARGETS})",
            predictions.len(),
            targets.len()
        )));
    }
    let column = |data: &[f64], c: usize| -> Vec<f64> {
        data.iter()
            .skip(c)
            .step_by(NUM_TARGETS)
            .map(|&y| scaler.inverse_transform(c, y))
            .collect()
    };
    let mut out = [Metrics { mae: 0.0, mse: 0.0, rmse: 0.0, r2: 0.0 }; NUM_TARGETS];
    for (c, m) in out.iter_mut().enumerate() {
        *m = target_metrics(&column(predictions, c), &column(targets, c))?;
    }
    Ok(out)
}

pub fn aggregate_global(per_target: &[Metrics; NUM_TARGETS]) -> Metrics {
    let mean = |f: fn(&Metrics) -> f64| per_target.iter().map(f).sum::<f64>() / NUM_TARGETS as f64;
    let mse = mean(|m| m.mse);
    Metrics {
        mae: mean(|m| m.mae),
        mse,
        rmse: mse.sqrt(),
        r2: mean(|m| m.r2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    pub unit: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Model label, e.g. `GRU` or `Persistence`.
    pub model: String,
    pub model_seed: Option<u64>,
    pub shuffle_seed: Option<u64>,
    pub sample_count: usize,
    pub targets: Vec<TargetReport>,
    pub global: Metrics,
}

pub fn unit(ch: Channel) -> &'static str {
    match ch {
        Channel::AirTemperature => "°C",
        Channel::IndoorCo2 => "ppm",
        Channel::RelativeHumidity => "%RH",
    }
}

impl MetricsReport {
    pub fn from_predictions(model: &str, predictions: &[f64], targets: &[f64], scaler: &Scaler) -> Result<Self> {
        let per = per_target_metrics(predictions, targets, scaler)?;
        Ok(MetricsReport {
            model: model.to_string(),
            model_seed: None,
            shuffle_seed: None,
            sample_count: targets.len() / NUM_TARGETS,
            targets: Channel::ALL
                .iter()
                .zip(per)
                .map(|(&ch, metrics)| TargetReport {
                    target: ch.label().to_string(),
                    unit: unit(ch).to_string(),
                    metrics,
                })
                .collect(),
            global: aggregate_global(&per),
        })
    }

    pub fn per_target(&self) -> [Metrics; NUM_TARGETS] {
        std::array::from_fn(|c| self.targets[c].metrics)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Normalized `n × 3` predictions for every sample, in dataset order.
pub fn predict_dataset(params: &ModelParams, data: &WindowedDataset, parallel: bool) -> Result<Vec<f64>> {
    let features = params.spec().input_features;
    if data.features() != features {
        return Err(Error::invalid(format!(
            "dataset has {} features, model expects {features}",
            data.features()
        )));
    }
    let s = data.sample_len();
    let chunks: Vec<&[f64]> = data.inputs().chunks(EVAL_CHUNK * s.max(1)).collect();
    let run = |c: &&[f64]| predict(params, c, data.window()).map(|m| m.into_vec());
    let parts: Vec<Vec<f64>> = if parallel {
        chunks.par_iter().map(run).collect::<Result<_>>()?
    } else {
        chunks.iter().map(run).collect::<Result<_>>()?
    };
    Ok(parts.concat())
}

/// Runs the model over every sample and reports metrics in original units.
pub fn evaluate(
    params: &ModelParams,
    model: &str,
    data: &WindowedDataset,
    scaler: &Scaler,
    parallel: bool,
) -> Result<MetricsReport> {
    let predictions = predict_dataset(params, data, parallel)?;
    let mut report = MetricsReport::from_predictions(model, &predictions, data.targets(), scaler)?;
    report.model_seed = Some(params.spec().seed);
    Ok(report)
}

/// Last observed reading of each target, i.e. the final input step's
/// sensor features (normalized, like the targets).
pub fn persistence_predictions(data: &WindowedDataset) -> Vec<f64> {
    let f = data.features();
    (0..data.len())
        .flat_map(|i| {
            let last = &data.input(i)[(data.window() - 1) * f..];
            last[..NUM_TARGETS].to_vec()
        })
        .collect()
}

pub fn evaluate_persistence(data: &WindowedDataset, scaler: &Scaler) -> Result<MetricsReport> {
    MetricsReport::from_predictions("Persistence", &persistence_predictions(data), data.targets(), scaler)
}

/// Writes `timestamp` plus truth/prediction columns per target in original
/// units, one row per sample.
pub fn write_series(path: &Path, data: &WindowedDataset, predictions: &[f64], scaler: &Scaler) -> Result<()> {
    if predictions.len() != data.targets().len() {
        return Err(Error::invalid("prediction count does not match the dataset"));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    for ch in Channel::ALL {
        header.push(format!("{}_true", ch.name()));
        header.push(format!("{}_pred", ch.name()));
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec = vec![data.timestamps()[i].to_string()];
        for c in 0..NUM_TARGETS {
            rec.push(scaler.inverse_transform(c, data.target(i)[c]).to_string());
            rec.push(scaler.inverse_transform(c, predictions[i * NUM_TARGETS + c]).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn export_series(
    params: &ModelParams,
    data: &WindowedDataset,
    scaler: &Scaler,
    path: &Path,
    parallel: bool,
) -> Result<()> {
    let predictions = predict_dataset(params, data, parallel)?;
    write_series(path, data, &predictions, scaler)
}

pub const TABLE_METRICS: [&str; 4] = ["MAE", "MSE", "RMSE", "R2"];
pub const TABLE_GROUPS: [&str; 4] = ["Global", "Temperature", "CO2", "Humidity"];

/// Comparison table with one row per metric and column
/// groups Global/Temperature/CO2/Humidity, one column per model inside each
/// group. Values are printed with four decimals; undefined R² is `NaN`.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let mut out = String::from("Metric");
    for g in TABLE_GROUPS {
        for r in reports {
            out.push_str(&format!(",{g} {}", r.model));
        }
    }
    out.push('\n');
    for (mi, name) in TABLE_METRICS.iter().enumerate() {
        out.push_str(name);
        for g in 0..TABLE_GROUPS.len() {
            for r in reports {
                let m = if g == 0 { r.global } else { r.targets[g - 1].metrics };
                let v = [m.mae, m.mse, m.rmse, m.r2][mi];
                out.push_str(&format!(",{v:.4}"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_comparison_table(reports: &[MetricsReport], path: &Path) -> Result<()> {
    std::fs::write(path, comparison_table(reports)).map_err(|e| Error::io(path, e))
}
