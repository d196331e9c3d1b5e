//! Raw sensor CSV to train/validation/test windowed datasets.
//!
//! The chain is ingest → regularize onto the 5-minute grid → fill short gaps
//! with cubic interpolation → keep continuous segments → fit the scaler on
//! the training portion → slide 12-step windows → split chronologically.

mod clean;
mod dataset;
mod features;
mod frame;

pub use clean::{
    extract_segments, interpolate_short_gaps, interpolate_with_count, ContinuousSegment, DEFAULT_MAX_GAP_STEPS,
    MIN_SEGMENT_LENGTH,
};
pub use dataset::{chronological_split, make_windows, split_sizes, SplitFractions, WindowedDataset};
pub use features::{
    encode_cyclical, fit_scaler, raw_features, FeatureRange, Scaler, FEATURE_NAMES, NUM_FEATURES, NUM_TARGETS,
};
pub use frame::{
    ingest_csv, parse_timestamp, regularize, regularize_with_stats, Channel, CsvSchema, RegularizeStats,
    TimeSeriesFrame, MAX_SNAP_SECONDS, STEP_SECONDS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input steps per sample (one hour of 5-minute readings).
pub const WINDOW: usize = 12;
/// Steps ahead of the last input that the target lies.
pub const HORIZON: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowShape {
    pub window: usize,
    pub horizon: usize,
}

impl Default for WindowShape {
    fn default() -> Self {
        WindowShape {
            window: WINDOW,
            horizon: HORIZON,
        }
    }
}

/// Frame index of the first input point of every sample, chronologically.
pub fn sample_origins(segments: &[ContinuousSegment], shape: WindowShape) -> Vec<usize> {
    let span = shape.window + shape.horizon;
    segments
        .iter()
        .filter(|s| s.len() >= span)
        .flat_map(|s| s.start_index..=s.end_index + 1 - span)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Source CSV column names; only used when ingesting.
    pub schema: CsvSchema,
    pub max_gap_steps: usize,
    pub min_segment_length: usize,
    pub window: usize,
    pub horizon: usize,
    pub split: SplitFractions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema: CsvSchema::default(),
            max_gap_steps: DEFAULT_MAX_GAP_STEPS,
            min_segment_length: MIN_SEGMENT_LENGTH,
            window: WINDOW,
            horizon: HORIZON,
            split: SplitFractions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn shape(&self) -> WindowShape {
        WindowShape {
            window: self.window,
            horizon: self.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.horizon == 0 {
            return Err(Error::config("window and horizon must be at least 1"));
        }
        let floor = MIN_SEGMENT_LENGTH.max(self.window + self.horizon);
        if self.min_segment_length < floor {
            return Err(Error::config(format!("min_segment_length must be at least {floor}")));
        }
        self.split.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub start_index: usize,
    pub end_index: usize,
    pub start_time: i64,
    pub end_time: i64,
    pub length: usize,
    pub samples: usize,
}

/// Record counts and gap statistics of one preparation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub raw_records: usize,
    pub raw_valid_records: usize,
    pub regularize: RegularizeStats,
    pub grid_points: usize,
    pub gap_runs_before_fill: usize,
    pub invalid_points_before_fill: usize,
    pub interpolated_readings: usize,
    pub gap_runs_after_fill: usize,
    pub segments: Vec<SegmentRow>,
    pub total_samples: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub test_samples: usize,
    pub constant_features: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub frame: TimeSeriesFrame,
    pub segments: Vec<ContinuousSegment>,
    pub scaler: Scaler,
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub test: WindowedDataset,
    pub report: PrepareReport,
}

/// Runs the whole preprocessing chain on an ingested frame.
pub fn prepare(raw: &TimeSeriesFrame, cfg: &PipelineConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let shape = cfg.shape();
    let (grid, reg_stats) = regularize_with_stats(raw)?;
    let runs_before = grid.invalid_runs();
    let (frame, interpolated) = interpolate_with_count(&grid, cfg.max_gap_steps);
    let segments = extract_segments(&frame, cfg.min_segment_length)?;
    let scaler = fit_scaler(&frame, &segments, cfg.split.train, shape)?;
    let windows = make_windows(&frame, &segments, &scaler, shape)?;
    let (train, validation, test) = chronological_split(&windows, cfg.split)?;

    let span = shape.window + shape.horizon;
    let report = PrepareReport {
        raw_records: raw.len(),
        raw_valid_records: raw.valid_count(),
        regularize: reg_stats,
        grid_points: grid.len(),
        gap_runs_before_fill: runs_before.len(),
        invalid_points_before_fill: runs_before.iter().map(|r| r.1).sum(),
        interpolated_readings: interpolated,
        gap_runs_after_fill: frame.invalid_runs().len(),
        segments: segments
            .iter()
            .map(|s| SegmentRow {
                start_index: s.start_index,
                end_index: s.end_index,
                start_time: frame.timestamps()[s.start_index],
                end_time: frame.timestamps()[s.end_index],
                length: s.len(),
                samples: (s.len() + 1).saturating_sub(span),
            })
            .collect(),
        total_samples: windows.len(),
        train_samples: train.len(),
        validation_samples: validation.len(),
        test_samples: test.len(),
        constant_features: scaler.constant_features(),
    };
    Ok(PreparedData {
        frame,
        segments,
        scaler,
        train,
        validation,
        test,
        report,
    })
}
