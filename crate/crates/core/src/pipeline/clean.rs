use serde::{Deserialize, Serialize};

use super::frame::{runs, TimeSeriesFrame, STEP_SECONDS};
use super::{HORIZON, WINDOW};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_GAP_STEPS: usize = 6;

/// Inclusive index range of a gap-free, fully valid stretch of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuousSegment {
    pub start_index: usize,
    pub end_index: usize,
}

impl ContinuousSegment {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Cubic through four points, evaluated at `x` (Lagrange form).
fn cubic_through(xs: [f64; 4], ys: [f64; 4], x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        let mut basis = 1.0;
        for j in 0..4 {
            if i != j {
                basis *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += ys[i] * basis;
    }
    acc
}

/// Fills short runs of invalid readings, channel by channel, with the cubic
/// through the two valid points on each side of the run. With four support
/// points the least-squares cubic is the interpolating one.
///
/// A run qualifies when it is at most `max_gap_steps` long and the two points
/// immediately before and after it are valid in the original frame; anything
/// else is left untouched.
pub fn interpolate_short_gaps(frame: &TimeSeriesFrame, max_gap_steps: usize) -> TimeSeriesFrame {
    interpolate_with_count(frame, max_gap_steps).0
}

/// As [`interpolate_short_gaps`], also returning how many readings were filled.
pub fn interpolate_with_count(frame: &TimeSeriesFrame, max_gap_steps: usize) -> (TimeSeriesFrame, usize) {
    let mut out = frame.clone();
    let n = frame.len();
    let mut filled = 0;
    let (values, valid) = out.values_mut();
    for c in 0..3 {
        let orig_valid = frame.channel_valid(super::Channel::ALL[c]);
        let orig = frame.channel(super::Channel::ALL[c]);
        for (start, len) in runs(n, |i| !orig_valid[i]) {
            let end = start + len; // first index after the run
            if len > max_gap_steps || start < 2 || end + 2 > n {
                continue;
            }
            let support = [start - 2, start - 1, end, end + 1];
            if !support.iter().all(|&i| orig_valid[i]) {
                continue;
            }
            // local coordinates keep the Lagrange weights well conditioned
            let xs = support.map(|i| i as f64 - start as f64);
            let ys = support.map(|i| orig[i]);
            for i in start..end {
                values[c][i] = cubic_through(xs, ys, (i - start) as f64);
                valid[c][i] = true;
                filled += 1;
            }
        }
    }
    (out, filled)
}

/// Smallest segment that yields a training window.
pub const MIN_SEGMENT_LENGTH: usize = WINDOW + HORIZON;

/// Maximal runs of valid points on a contiguous 5-minute grid with at least
/// `min_length` points, in chronological order.
pub fn extract_segments(frame: &TimeSeriesFrame, min_length: usize) -> Result<Vec<ContinuousSegment>> {
    if min_length < MIN_SEGMENT_LENGTH {
        return Err(Error::config(format!(
            "min_length {min_length} is below {MIN_SEGMENT_LENGTH}, the shortest segment that yields a window"
        )));
    }
    let ts = frame.timestamps();
    let mut segments = Vec::new();
    let mut i = 0;
    while i < frame.len() {
        if !frame.is_valid(i) {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        while i < frame.len() && frame.is_valid(i) && ts[i] - ts[i - 1] == STEP_SECONDS {
            i += 1;
        }
        if i - start >= min_length {
            segments.push(ContinuousSegment {
                start_index: start,
                end_index: i - 1,
            });
        }
    }
    Ok(segments)
}
