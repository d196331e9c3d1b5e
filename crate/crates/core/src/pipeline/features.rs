use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use super::clean::ContinuousSegment;
use super::frame::{Channel, TimeSeriesFrame};
use super::{sample_origins, split_sizes, WindowShape};
use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 7] = [
    "air_temperature",
    "indoor_co2",
    "relative_humidity",
    "day_sin",
    "day_cos",
    "month_sin",
    "month_cos",
];
pub const NUM_FEATURES: usize = FEATURE_NAMES.len();
pub const NUM_TARGETS: usize = 3;

/// `(day_sin, day_cos, month_sin, month_cos)` for an epoch timestamp, using
/// seconds since local midnight and the local calendar month.
pub fn encode_cyclical(timestamp: i64, utc_offset_seconds: i32) -> [f64; 4] {
    let local = timestamp + utc_offset_seconds as i64;
    let since_midnight = local.rem_euclid(86_400) as f64;
    let month = DateTime::from_timestamp(local, 0).map_or(1, |d| d.month());
    let day = 2.0 * PI * since_midnight / 86_400.0;
    let mon = 2.0 * PI * (month as f64 - 1.0) / 12.0;
    [day.sin(), day.cos(), mon.sin(), mon.cos()]
}

/// Raw (unscaled) feature vector of frame point `i`.
pub fn raw_features(frame: &TimeSeriesFrame, i: usize) -> [f64; NUM_FEATURES] {
    let r = frame.readings(i);
    let cyc = encode_cyclical(frame.timestamps()[i], frame.utc_offset_seconds());
    [r[0], r[1], r[2], cyc[0], cyc[1], cyc[2], cyc[3]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Per-feature min/max scaling to `[0, 1]`. A constant feature (max = min)
/// is stored with span 1 and maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub features: Vec<FeatureRange>,
}

impl Scaler {
    pub fn new(mins: &[f64], maxs: &[f64]) -> Result<Self> {
        if mins.len() != maxs.len() || mins.len() > NUM_FEATURES {
            return Err(Error::invalid("scaler min/max length mismatch"));
        }
        let features = mins
            .iter()
            .zip(maxs)
            .enumerate()
            .map(|(i, (&min, &max))| {
                if !(min.is_finite() && max.is_finite() && max >= min) {
                    return Err(Error::invalid(format!(
                        "feature {} has invalid range [{min}, {max}]",
                        FEATURE_NAMES[i]
                    )));
                }
                Ok(FeatureRange {
                    name: FEATURE_NAMES[i].to_string(),
                    min,
                    max,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Scaler { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn is_constant(&self, feature: usize) -> bool {
        let f = &self.features[feature];
        f.max == f.min
    }

    pub fn constant_features(&self) -> Vec<String> {
        (0..self.len())
            .filter(|&i| self.is_constant(i))
            .map(|i| self.features[i].name.clone())
            .collect()
    }

    fn span(&self, feature: usize) -> f64 {
        let f = &self.features[feature];
        if f.max > f.min {
            f.max - f.min
        } else {
            1.0
        }
    }

    pub fn transform(&self, feature: usize, x: f64) -> f64 {
        (x - self.features[feature].min) / self.span(feature)
    }

    pub fn inverse_transform(&self, feature: usize, y: f64) -> f64 {
        self.features[feature].min + y * self.span(feature)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scaler = serde_json::from_str(&text)?;
        let mins: Vec<f64> = s.features.iter().map(|f| f.min).collect();
        let maxs: Vec<f64> = s.features.iter().map(|f| f.max).collect();
        Scaler::new(&mins, &maxs).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Fits the sensor-channel ranges on the points that feed training samples
/// only (inputs and targets of the first `⌊train_fraction·N⌋` windows).
/// Cyclical features get the fixed range `[-1, 1]`.
pub fn fit_scaler(
    frame: &TimeSeriesFrame,
    segments: &[ContinuousSegment],
    train_fraction: f64,
    shape: WindowShape,
) -> Result<Scaler> {
    if segments.is_empty() {
        return Err(Error::EmptyDataset("no continuous segments to fit the scaler on".into()));
    }
    let origins = sample_origins(segments, shape);
    let n_train = split_sizes(origins.len(), train_fraction, 0.0).0;
    if n_train == 0 {
        return Err(Error::EmptyDataset("training portion holds no samples".into()));
    }
    let span = shape.window + shape.horizon;
    let mut mins = [f64::INFINITY; NUM_TARGETS];
    let mut maxs = [f64::NEG_INFINITY; NUM_TARGETS];
    // origins are increasing, so each point is visited at most once
    let mut next_unvisited = 0;
    for &o in &origins[..n_train] {
        for i in o.max(next_unvisited)..o + span {
            for ch in Channel::ALL {
                let v = frame.channel(ch)[i];
                mins[ch.index()] = mins[ch.index()].min(v);
                maxs[ch.index()] = maxs[ch.index()].max(v);
            }
        }
        next_unvisited = o + span;
    }
    let mut all_min = mins.to_vec();
    let mut all_max = maxs.to_vec();
    all_min.extend([-1.0; 4]);
    all_max.extend([1.0; 4]);
    Scaler::new(&all_min, &all_max)
}
