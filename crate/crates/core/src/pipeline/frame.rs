use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal sampling step of the sensor grid.
pub const STEP_SECONDS: i64 = 300;
/// Observations further than this from a grid point are discarded.
pub const MAX_SNAP_SECONDS: i64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    AirTemperature,
    IndoorCo2,
    RelativeHumidity,
}

impl Channel {
    pub const ALL: [Channel; 3] = [
        Channel::AirTemperature,
        Channel::IndoorCo2,
        Channel::RelativeHumidity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::AirTemperature => "air_temperature",
            Channel::IndoorCo2 => "indoor_co2",
            Channel::RelativeHumidity => "relative_humidity",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Channel::AirTemperature => "Temperature",
            Channel::IndoorCo2 => "CO2",
            Channel::RelativeHumidity => "Humidity",
        }
    }

    /// Physically plausible range; readings outside it are flagged invalid.
    pub fn valid_range(self) -> (f64, f64) {
        match self {
            Channel::AirTemperature => (-40.0, 60.0),
            Channel::IndoorCo2 => (0.0, 10_000.0),
            Channel::RelativeHumidity => (0.0, 100.0),
        }
    }

    pub fn accepts(self, v: f64) -> bool {
        let (lo, hi) = self.valid_range();
        v.is_finite() && v >= lo && v <= hi
    }
}

/// Column names of the source CSV for the timestamp and the three channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub timestamp: String,
    pub air_temperature: String,
    pub indoor_co2: String,
    pub relative_humidity: String,
    /// Offset of local time from UTC, used for the cyclical time features.
    pub utc_offset_seconds: i32,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            air_temperature: Channel::AirTemperature.name().into(),
            indoor_co2: Channel::IndoorCo2.name().into(),
            relative_humidity: Channel::RelativeHumidity.name().into(),
            utc_offset_seconds: 0,
        }
    }
}

impl CsvSchema {
    pub fn column(&self, ch: Channel) -> &str {
        match ch {
            Channel::AirTemperature => &self.air_temperature,
            Channel::IndoorCo2 => &self.indoor_co2,
            Channel::RelativeHumidity => &self.relative_humidity,
        }
    }
}

/// Timestamped three-channel sensor record set.
///
/// Invalid readings are stored as NaN with their validity flag cleared; a
/// point is valid when all three channels are.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    timestamps: Vec<i64>,
    values: [Vec<f64>; 3],
    valid: [Vec<bool>; 3],
    utc_offset_seconds: i32,
}

impl TimeSeriesFrame {
    /// Builds a frame from raw readings; non-finite or out-of-range values are
    /// flagged invalid.
    pub fn new(timestamps: Vec<i64>, values: [Vec<f64>; 3], utc_offset_seconds: i32) -> Result<Self> {
        let n = timestamps.len();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::invalid("channel lengths differ from timestamp length"));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("timestamps must be strictly increasing"));
        }
        let mut values = values;
        let valid = std::array::from_fn(|c| {
            let ch = Channel::ALL[c];
            values[c]
                .iter_mut()
                .map(|v| {
                    let ok = ch.accepts(*v);
                    if !ok {
                        *v = f64::NAN;
                    }
                    ok
                })
                .collect()
        });
        Ok(TimeSeriesFrame {
            timestamps,
            values,
            valid,
            utc_offset_seconds,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn channel(&self, ch: Channel) -> &[f64] {
        &self.values[ch.index()]
    }

    pub fn channel_valid(&self, ch: Channel) -> &[bool] {
        &self.valid[ch.index()]
    }

    pub fn utc_offset_seconds(&self) -> i32 {
        self.utc_offset_seconds
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.iter().all(|v| v[i])
    }

    pub fn valid_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_valid(i)).count()
    }

    /// Sensor readings of point `i` in channel order.
    pub fn readings(&self, i: usize) -> [f64; 3] {
        std::array::from_fn(|c| self.values[c][i])
    }

    pub(crate) fn values_mut(&mut self) -> (&mut [Vec<f64>; 3], &mut [Vec<bool>; 3]) {
        (&mut self.values, &mut self.valid)
    }

    /// Maximal runs of invalid points as `(start, length)`.
    pub fn invalid_runs(&self) -> Vec<(usize, usize)> {
        runs(self.len(), |i| !self.is_valid(i))
    }

    /// Writes the frame in the CSV layout [`ingest_csv`] reads with the default
    /// schema. Invalid cells are left blank.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let schema = CsvSchema::default();
        w.write_record([
            schema.timestamp.as_str(),
            schema.air_temperature.as_str(),
            schema.indoor_co2.as_str(),
            schema.relative_humidity.as_str(),
        ])?;
        for i in 0..self.len() {
            let ts = DateTime::from_timestamp(self.timestamps[i], 0)
                .ok_or_else(|| Error::invalid(format!("timestamp {} out of range", self.timestamps[i])))?;
            let mut rec = vec![ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()];
            for c in 0..3 {
                rec.push(if self.valid[c][i] {
                    self.values[c][i].to_string()
                } else {
                    String::new()
                });
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub(crate) fn runs(n: usize, pred: impl Fn(usize) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if pred(i) {
            let start = i;
            while i < n && pred(i) {
                i += 1;
            }
            out.push((start, i - start));
        } else {
            i += 1;
        }
    }
    out
}

/// Parses epoch seconds (integer or fractional), RFC 3339, or a naive
/// `YYYY-MM-DD[ T]HH:MM:SS` timestamp taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then(|| v.round() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Reads a sensor CSV. Rows are sorted by time and duplicate timestamps keep
/// the first row in file order. Blank, unparseable or out-of-range readings
/// are flagged invalid.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        index.get(name).copied().ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
            path: path.to_path_buf(),
        })
    };
    let ts_col = col(&schema.timestamp)?;
    let ch_cols = [
        col(schema.column(Channel::AirTemperature))?,
        col(schema.column(Channel::IndoorCo2))?,
        col(schema.column(Channel::RelativeHumidity))?,
    ];

    let mut rows: Vec<(i64, [f64; 3])> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let raw_ts = rec.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("unparseable timestamp {raw_ts:?}"),
        })?;
        let vals = ch_cols.map(|c| {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .unwrap_or(f64::NAN)
        });
        rows.push((ts, vals));
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("{} contains no data rows", path.display())));
    }
    rows.sort_by_key(|r| r.0);
    rows.dedup_by_key(|r| r.0);

    let timestamps = rows.iter().map(|r| r.0).collect();
    let values = std::array::from_fn(|c| rows.iter().map(|r| r.1[c]).collect());
    TimeSeriesFrame::new(timestamps, values, schema.utc_offset_seconds)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegularizeStats {
    pub input_points: usize,
    pub discarded_off_grid: usize,
    pub discarded_duplicate_slot: usize,
    pub inserted_gap_points: usize,
}

/// Snaps timestamps onto the 5-minute grid, drops observations more than 60 s
/// from any grid point (or landing on an already-filled slot), and inserts
/// invalid points for every empty grid slot between the first and last.
pub fn regularize(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    regularize_with_stats(frame).map(|(f, _)| f)
}

pub fn regularize_with_stats(frame: &TimeSeriesFrame) -> Result<(TimeSeriesFrame, RegularizeStats)> {
    if frame.is_empty() {
        return Err(Error::invalid("cannot regularize an empty frame"));
    }
    let mut stats = RegularizeStats {
        input_points: frame.len(),
        ..Default::default()
    };
    let mut kept: Vec<(i64, usize)> = Vec::with_capacity(frame.len());
    for (i, &ts) in frame.timestamps.iter().enumerate() {
        let snapped = (ts as f64 / STEP_SECONDS as f64).round() as i64 * STEP_SECONDS;
        if (ts - snapped).abs() > MAX_SNAP_SECONDS {
            stats.discarded_off_grid += 1;
            continue;
        }
        if kept.last().is_some_and(|&(s, _)| s == snapped) {
            stats.discarded_duplicate_slot += 1;
            continue;
        }
        kept.push((snapped, i));
    }
    let Some(&(first, _)) = kept.first() else {
        return Err(Error::invalid("no observation lies within 60 s of the 5-minute grid"));
    };
    let last = kept.last().map(|k| k.0).unwrap_or(first);
    let n = ((last - first) / STEP_SECONDS) as usize + 1;

    let timestamps: Vec<i64> = (0..n as i64).map(|k| first + k * STEP_SECONDS).collect();
    let mut values: [Vec<f64>; 3] = std::array::from_fn(|_| vec![f64::NAN; n]);
    let mut valid: [Vec<bool>; 3] = std::array::from_fn(|_| vec![false; n]);
    let mut filled = vec![false; n];
    for &(ts, src) in &kept {
        let slot = ((ts - first) / STEP_SECONDS) as usize;
        filled[slot] = true;
        for c in 0..3 {
            values[c][slot] = frame.values[c][src];
            valid[c][slot] = frame.valid[c][src];
        }
    }
    stats.inserted_gap_points = filled.iter().filter(|f| !**f).count();
    Ok((
        TimeSeriesFrame {
            timestamps,
            values,
            valid,
            utc_offset_seconds: frame.utc_offset_seconds,
        },
        stats,
    ))
}
