use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use super::clean::ContinuousSegment;
use super::features::{raw_features, Scaler, NUM_FEATURES, NUM_TARGETS};
use super::frame::TimeSeriesFrame;
use super::{sample_origins, WindowShape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"IEQW1";

/// Supervised samples: normalized `window × features` inputs, normalized
/// next-step sensor targets and the epoch time of each target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    window: usize,
    features: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    timestamps: Vec<i64>,
}

impl WindowedDataset {
    pub fn new(
        window: usize,
        features: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        timestamps: Vec<i64>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if inputs.len() != n * window * features || targets.len() != n * NUM_TARGETS {
            return Err(Error::invalid(format!(
                "dataset buffers do not match {n} samples of {window}x{features}"
            )));
        }
        Ok(WindowedDataset {
            window,
            features,
            inputs,
            targets,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn sample_len(&self) -> usize {
        self.window * self.features
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let s = self.sample_len();
        &self.inputs[i * s..(i + 1) * s]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * NUM_TARGETS..(i + 1) * NUM_TARGETS]
    }

    pub fn slice(&self, range: Range<usize>) -> WindowedDataset {
        let s = self.sample_len();
        WindowedDataset {
            window: self.window,
            features: self.features,
            inputs: self.inputs[range.start * s..range.end * s].to_vec(),
            targets: self.targets[range.start * NUM_TARGETS..range.end * NUM_TARGETS].to_vec(),
            timestamps: self.timestamps[range].to_vec(),
        }
    }

    /// Gathers the listed samples into a new dataset, in the given order.
    pub fn select(&self, indices: &[usize]) -> WindowedDataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.sample_len());
        let mut targets = Vec::with_capacity(indices.len() * NUM_TARGETS);
        let mut timestamps = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
            timestamps.push(self.timestamps[i]);
        }
        WindowedDataset {
            window: self.window,
            features: self.features,
            inputs,
            targets,
            timestamps,
        }
    }

    /// Binary layout: `IEQW1`, then samples/window/features/targets as LE
    /// u64, then LE f64 inputs, targets and timestamps, all row-major.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        put(MAGIC)?;
        for count in [self.len(), self.window, self.features, NUM_TARGETS] {
            put(&(count as u64).to_le_bytes())?;
        }
        for v in self.inputs.iter().chain(&self.targets) {
            put(&v.to_le_bytes())?;
        }
        for &t in &self.timestamps {
            put(&(t as f64).to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(Error::format(path, "missing IEQW1 magic"));
        }
        let mut counts = [0usize; 4];
        for c in &mut counts {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
            *c = u64::from_le_bytes(b) as usize;
        }
        let [n, window, features, targets] = counts;
        if targets != NUM_TARGETS {
            return Err(Error::format(path, format!("expected {NUM_TARGETS} targets, found {targets}")));
        }
        let mut read_f64s = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let inputs = read_f64s(n * window * features)?;
        let target_vals = read_f64s(n * NUM_TARGETS)?;
        let timestamps = read_f64s(n)?.into_iter().map(|t| t as i64).collect();
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        if !rest.is_empty() {
            return Err(Error::format(path, format!("{} trailing bytes", rest.len())));
        }
        WindowedDataset::new(window, features, inputs, target_vals, timestamps)
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Builds one sample per valid offset of every segment: inputs are the
/// normalized features of `window` consecutive points, the target is the
/// normalized sensor reading `horizon` steps after the last input.
pub fn make_windows(
    frame: &TimeSeriesFrame,
    segments: &[ContinuousSegment],
    scaler: &Scaler,
    shape: WindowShape,
) -> Result<WindowedDataset> {
    if scaler.len() != NUM_FEATURES {
        return Err(Error::invalid(format!(
            "scaler covers {} features, expected {NUM_FEATURES}",
            scaler.len()
        )));
    }
    let origins = sample_origins(segments, shape);
    if origins.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no segment is at least {} points long",
            shape.window + shape.horizon
        )));
    }
    let normalized = |i: usize| -> [f64; NUM_FEATURES] {
        let raw = raw_features(frame, i);
        std::array::from_fn(|f| scaler.transform(f, raw[f]))
    };
    let n = origins.len();
    let mut inputs = Vec::with_capacity(n * shape.window * NUM_FEATURES);
    let mut targets = Vec::with_capacity(n * NUM_TARGETS);
    let mut timestamps = Vec::with_capacity(n);
    for seg in segments {
        if seg.len() < shape.window + shape.horizon {
            continue;
        }
        let rows: Vec<[f64; NUM_FEATURES]> = (seg.start_index..=seg.end_index).map(normalized).collect();
        for o in 0..=seg.len() - shape.window - shape.horizon {
            for row in &rows[o..o + shape.window] {
                inputs.extend_from_slice(row);
            }
            let t = o + shape.window + shape.horizon - 1;
            targets.extend_from_slice(&rows[t][..NUM_TARGETS]);
            timestamps.push(frame.timestamps()[seg.start_index + t]);
        }
    }
    WindowedDataset::new(shape.window, NUM_FEATURES, inputs, targets, timestamps)
}

/// Train/validation/test sizes for `n` samples: `⌊train·n⌋`, `⌊val·n⌋`, and
/// the remainder.
pub fn split_sizes(n: usize, train: f64, validation: f64) -> (usize, usize, usize) {
    // the epsilon absorbs representation error such as 0.075·40 = 2.9999…
    let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let tr = floor(train).min(n);
    let va = floor(validation).min(n - tr);
    (tr, va, n - tr - va)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.85,
            validation: 0.075,
            test: 0.075,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions {parts:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Contiguous chronological train/validation/test slices (no shuffling).
pub fn chronological_split(
    dataset: &WindowedDataset,
    fractions: SplitFractions,
) -> Result<(WindowedDataset, WindowedDataset, WindowedDataset)> {
    fractions.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty dataset".into()));
    }
    let (tr, va, te) = split_sizes(dataset.len(), fractions.train, fractions.validation);
    if tr == 0 || va == 0 || te == 0 {
        return Err(Error::config(format!(
            "split of {} samples leaves an empty slice ({tr}/{va}/{te})",
            dataset.len()
        )));
    }
    Ok((
        dataset.slice(0..tr),
        dataset.slice(tr..tr + va),
        dataset.slice(tr + va..dataset.len()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{extract_segments, fit_scaler};

    fn frame_with_invalid(n: usize, invalid: &[usize]) -> TimeSeriesFrame {
        let mut temp: Vec<f64> = (0..n).map(|i| 20.0 + (i % 7) as f64).collect();
        for &i in invalid {
            temp[i] = f64::NAN;
        }
        let co2 = (0..n).map(|i| 400.0 + i as f64).collect();
        let hum = (0..n).map(|i| 40.0 + (i % 3) as f64).collect();
        TimeSeriesFrame::new((0..n as i64).map(|i| 1_672_617_600 + i * 300).collect(), [temp, co2, hum], 0).unwrap()
    }

    fn windows_for(frame: &TimeSeriesFrame) -> WindowedDataset {
        let segs = extract_segments(frame, 13).unwrap();
        let scaler = fit_scaler(frame, &segs, 1.0, WindowShape::default()).unwrap();
        make_windows(frame, &segs, &scaler, WindowShape::default()).unwrap()
    }

    #[test]
    fn sample_counts_per_segment() {
        assert_eq!(windows_for(&frame_with_invalid(24, &[])).len(), 12);
        assert_eq!(windows_for(&frame_with_invalid(13, &[])).len(), 1);
    }

    #[test]
    fn windows_align_with_frame() {
        let frame = frame_with_invalid(30, &[]);
        let ds = windows_for(&frame);
        assert_eq!(ds.window(), 12);
        assert_eq!(ds.features(), 7);
        // target of sample 3 is point 15; CO2 rises by 1 ppm per step
        assert_eq!(ds.timestamps()[3], frame.timestamps()[15]);
        let co2_in_last = ds.input(3)[11 * 7 + 1];
        let co2_target = ds.target(3)[1];
        assert!(co2_target > co2_in_last);
    }

    #[test]
    fn no_segment_long_enough_is_an_empty_dataset() {
        let frame = frame_with_invalid(30, &[]);
        let segs = extract_segments(&frame, 13).unwrap();
        let scaler = fit_scaler(&frame, &segs, 0.85, WindowShape::default()).unwrap();
        let short = [ContinuousSegment { start_index: 0, end_index: 5 }];
        assert!(matches!(
            make_windows(&frame, &short, &scaler, WindowShape::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn split_sizes_floor_arithmetic() {
        assert_eq!(split_sizes(1000, 0.85, 0.075), (850, 75, 75));
        assert_eq!(split_sizes(40, 0.85, 0.075), (34, 3, 3));
        assert_eq!(split_sizes(123_789, 0.85, 0.075), (105_220, 9_284, 9_285));
    }

    #[test]
    fn split_is_chronological() {
        let ds = windows_for(&frame_with_invalid(200, &[]));
        let (tr, va, te) = chronological_split(&ds, SplitFractions::default()).unwrap();
        assert_eq!(tr.len() + va.len() + te.len(), ds.len());
        assert!(tr.timestamps().last() < va.timestamps().first());
        assert!(va.timestamps().last() < te.timestamps().first());
    }

    #[test]
    fn split_rejects_bad_fractions_and_empty_slices() {
        let ds = windows_for(&frame_with_invalid(20, &[]));
        let bad = SplitFractions { train: 0.9, validation: 0.2, test: 0.1 };
        assert!(matches!(chronological_split(&ds, bad), Err(Error::Config(_))));
        // 8 samples: 6 / 0 / 2
        assert!(matches!(chronological_split(&ds, SplitFractions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let ds = windows_for(&frame_with_invalid(40, &[20]));
        let tmp = tempfile::NamedTempFile::new().unwrap();
        ds.write_binary(tmp.path()).unwrap();
        let bytes = std::fs::read(tmp.path()).unwrap();
        assert_eq!(&bytes[..5], b"IEQW1");
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), ds.len() as u64);
        assert_eq!(bytes.len(), 5 + 32 + 8 * ds.len() * (12 * 7 + 3 + 1));
        assert_eq!(WindowedDataset::read_binary(tmp.path()).unwrap(), ds);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let ds = windows_for(&frame_with_invalid(30, &[]));
        let tmp = tempfile::NamedTempFile::new().unwrap();
        ds.write_binary(tmp.path()).unwrap();
        let bytes = std::fs::read(tmp.path()).unwrap();
        std::fs::write(tmp.path(), &bytes[..bytes.len() - 3]).unwrap();
        assert!(WindowedDataset::read_binary(tmp.path()).is_err());
        std::fs::write(tmp.path(), b"NOPE!").unwrap();
        assert!(matches!(WindowedDataset::read_binary(tmp.path()), Err(Error::Format { .. })));
    }
}
