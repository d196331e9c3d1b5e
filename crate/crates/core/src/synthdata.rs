//! Seeded synthetic room data: daily temperature and humidity cycles, CO₂
//! occupancy pulses, Gaussian sensor noise and injected outages.
//!
//! A CO₂ pulse models a room with one ventilation time constant `τ`: while
//! occupied for `D` steps the excess concentration rises as `M(1 − e^{−s/τ})`,
//! afterwards it decays as `e^{−s/τ}` from wherever it peaked.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{TimeSeriesFrame, STEP_SECONDS};

pub const STEPS_PER_DAY: usize = 288;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    pub seed: u64,
    /// Epoch seconds of the first reading; should sit on a 5-minute boundary.
    pub start_epoch: i64,
    pub utc_offset_seconds: i32,
    pub temperature_base: f64,
    pub temperature_amplitude: f64,
    pub co2_baseline: f64,
    /// Mean number of occupancy events per day (Poisson).
    pub co2_events_per_day: f64,
    /// Equilibrium excess CO₂ of an occupied room, ppm.
    pub co2_event_magnitude: f64,
    /// Ventilation time constant in steps.
    pub co2_decay_steps: f64,
    /// Occupancy duration of one event in steps.
    pub co2_occupancy_steps: usize,
    /// Local hours within which events start, `[from, to)`.
    pub occupied_hours: (f64, f64),
    pub humidity_base: f64,
    pub humidity_amplitude: f64,
    pub temperature_noise: f64,
    pub co2_noise: f64,
    pub humidity_noise: f64,
    /// Mean number of outages per day (Poisson).
    pub gaps_per_day: f64,
    /// Outage lengths are uniform over `[gap_min_steps, gap_max_steps]`.
    pub gap_min_steps: usize,
    pub gap_max_steps: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 14,
            seed: 42,
            // 2023-01-02T00:00:00Z, a Monday.
            start_epoch: 1_672_617_600,
            utc_offset_seconds: 0,
            temperature_base: 22.0,
            temperature_amplitude: 1.5,
            co2_baseline: 400.0,
            co2_events_per_day: 4.0,
            co2_event_magnitude: 300.0,
            co2_decay_steps: 12.0,
            co2_occupancy_steps: 12,
            occupied_hours: (8.0, 18.0),
            humidity_base: 45.0,
            humidity_amplitude: 5.0,
            temperature_noise: 0.05,
            co2_noise: 2.0,
            humidity_noise: 0.2,
            gaps_per_day: 0.0,
            gap_min_steps: 1,
            gap_max_steps: 24,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("temperature_amplitude", self.temperature_amplitude),
            ("co2_baseline", self.co2_baseline),
            ("co2_events_per_day", self.co2_events_per_day),
            ("co2_event_magnitude", self.co2_event_magnitude),
            ("humidity_amplitude", self.humidity_amplitude),
            ("temperature_noise", self.temperature_noise),
            ("co2_noise", self.co2_noise),
            ("humidity_noise", self.humidity_noise),
            ("gaps_per_day", self.gaps_per_day),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("synth.{name} must be a finite value ≥ 0")));
            }
        }
        if self.days == 0 {
            return Err(Error::config("synth.days must be at least 1"));
        }
        if self.co2_decay_steps.is_nan() || self.co2_decay_steps <= 0.0 {
            return Err(Error::config("synth.co2_decay_steps must be positive"));
        }
        let (from, to) = self.occupied_hours;
        if !(0.0 <= from && from < to && to <= 24.0) {
            return Err(Error::config("synth.occupied_hours must satisfy 0 ≤ from < to ≤ 24"));
        }
        if self.gap_min_steps == 0 || self.gap_min_steps > self.gap_max_steps {
            return Err(Error::config("synth gap lengths need 1 ≤ gap_min_steps ≤ gap_max_steps"));
        }
        if self.start_epoch.rem_euclid(STEP_SECONDS) != 0 {
            return Err(Error::config("synth.start_epoch must lie on a 5-minute boundary"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.days * STEPS_PER_DAY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyEvent {
    pub start_index: usize,
    pub duration_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedGap {
    pub start_index: usize,
    pub length: usize,
}

/// Noiseless signals and exact event/outage positions behind a generated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLog {
    pub config: SynthConfig,
    pub timestamps: Vec<i64>,
    pub air_temperature: Vec<f64>,
    pub indoor_co2: Vec<f64>,
    pub relative_humidity: Vec<f64>,
    pub events: Vec<OccupancyEvent>,
    /// Disjoint, sorted, non-adjacent outages.
    pub gaps: Vec<InjectedGap>,
}

impl GroundTruthLog {
    pub fn clean(&self, channel: usize) -> &[f64] {
        match channel {
            0 => &self.air_temperature,
            1 => &self.indoor_co2,
            2 => &self.relative_humidity,
            _ => panic!("channel index {channel} out of range"),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Excess CO₂ of one event `s` steps after it started.
pub fn pulse(s: f64, magnitude: f64, tau: f64, duration: f64) -> f64 {
    if s < 0.0 {
        0.0
    } else if s <= duration {
        magnitude * (1.0 - (-s / tau).exp())
    } else {
        magnitude * (1.0 - (-duration / tau).exp()) * (-(s - duration) / tau).exp()
    }
}

/// Generates `days × 288` readings on the 5-minute grid. Outage points are
/// present in the frame but invalid on all channels.
pub fn generate(cfg: &SynthConfig) -> Result<(TimeSeriesFrame, GroundTruthLog)> {
    cfg.validate()?;
    let n = cfg.steps();
    // Separate streams so toggling one component leaves the others unchanged.
    let mut event_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    event_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2);
    let mut gap_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    gap_rng.set_stream(3);

    let timestamps: Vec<i64> = (0..n as i64).map(|i| cfg.start_epoch + i * STEP_SECONDS).collect();
    let local_step = |i: usize| -> f64 {
        let local = timestamps[i] + cfg.utc_offset_seconds as i64;
        local.rem_euclid(86_400) as f64 / STEP_SECONDS as f64
    };

    let mut events = Vec::new();
    if cfg.co2_events_per_day > 0.0 {
        let per_day = Poisson::new(cfg.co2_events_per_day).map_err(|e| Error::config(e.to_string()))?;
        let (from, to) = cfg.occupied_hours;
        let steps_per_hour = 3600.0 / STEP_SECONDS as f64;
        let day0 = timestamps[0] + cfg.utc_offset_seconds as i64;
        let first_midnight = -(day0.rem_euclid(86_400) / STEP_SECONDS);
        for day in 0..=cfg.days as i64 {
            let count = per_day.sample(&mut event_rng) as usize;
            for _ in 0..count {
                let hour = event_rng.random_range(from..to);
                let start = first_midnight + day * STEPS_PER_DAY as i64 + (hour * steps_per_hour).floor() as i64;
                if (0..n as i64).contains(&start) {
                    events.push(OccupancyEvent {
                        start_index: start as usize,
                        duration_steps: cfg.co2_occupancy_steps,
                    });
                }
            }
        }
        events.sort_by_key(|e| e.start_index);
    }

    let mut temperature = Vec::with_capacity(n);
    let mut co2 = vec![cfg.co2_baseline; n];
    let mut humidity = Vec::with_capacity(n);
    for i in 0..n {
        let phase = TAU * local_step(i) / STEPS_PER_DAY as f64;
        temperature.push(cfg.temperature_base + cfg.temperature_amplitude * phase.sin());
        humidity.push(cfg.humidity_base + cfg.humidity_amplitude * phase.cos());
    }
    // Contributions below 1e-12 ppm are dropped; the tail is geometric.
    let tail = (cfg.co2_decay_steps * (cfg.co2_event_magnitude.max(1.0) * 1e12).ln()).ceil() as usize;
    for ev in &events {
        let end = (ev.start_index + ev.duration_steps + tail).min(n);
        for (i, c) in co2.iter_mut().enumerate().take(end).skip(ev.start_index) {
            *c += pulse(
                (i - ev.start_index) as f64,
                cfg.co2_event_magnitude,
                cfg.co2_decay_steps,
                ev.duration_steps as f64,
            );
        }
    }

    let clean = [temperature, co2, humidity];
    let sigmas = [cfg.temperature_noise, cfg.co2_noise, cfg.humidity_noise];
    let mut noisy = clean.clone();
    // draws interleave channels per time step; that order is part of the seed
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        for c in 0..3 {
            if sigmas[c] > 0.0 {
                let z: f64 = noise_rng.sample(StandardNormal);
                noisy[c][i] += sigmas[c] * z;
            }
        }
    }

    let gaps = draw_gaps(cfg, n, &mut gap_rng)?;
    for g in &gaps {
        for ch in noisy.iter_mut() {
            ch[g.start_index..g.start_index + g.length].fill(f64::NAN);
        }
    }

    let frame = TimeSeriesFrame::new(timestamps.clone(), noisy, cfg.utc_offset_seconds)?;
    let [air_temperature, indoor_co2, relative_humidity] = clean;
    let log = GroundTruthLog {
        config: cfg.clone(),
        timestamps,
        air_temperature,
        indoor_co2,
        relative_humidity,
        events,
        gaps,
    };
    Ok((frame, log))
}

/// Outages drawn per day, then merged so overlapping or touching ones become
/// a single recorded gap.
fn draw_gaps(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<InjectedGap>> {
    if cfg.gaps_per_day == 0.0 {
        return Ok(Vec::new());
    }
    let per_day = Poisson::new(cfg.gaps_per_day).map_err(|e| Error::config(e.to_string()))?;
    let mut raw = Vec::new();
    for day in 0..cfg.days {
        let count = per_day.sample(rng) as usize;
        for _ in 0..count {
            let start = day * STEPS_PER_DAY + rng.random_range(0..STEPS_PER_DAY);
            let len = rng.random_range(cfg.gap_min_steps..=cfg.gap_max_steps);
            let end = (start + len).min(n);
            raw.push((start, end));
        }
    }
    raw.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in raw {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    Ok(merged
        .into_iter()
        .map(|(s, e)| InjectedGap {
            start_index: s,
            length: e - s,
        })
        .collect())
}
