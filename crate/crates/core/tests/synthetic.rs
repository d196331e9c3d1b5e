use ieq_core::evaluation::evaluate_persistence;
use ieq_core::pipeline::{
    extract_segments, ingest_csv, interpolate_short_gaps, prepare, regularize, Channel, CsvSchema, PipelineConfig,
    DEFAULT_MAX_GAP_STEPS, MIN_SEGMENT_LENGTH, WINDOW,
};
use ieq_core::synthdata::{generate, GroundTruthLog, SynthConfig};

#[test]
fn csv_round_trip_is_exact() {
    let cfg = SynthConfig { days: 2, gaps_per_day: 2.0, ..SynthConfig::default() };
    let (frame, log) = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("room.csv");
    frame.write_csv(&path).unwrap();
    let back = ingest_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(back.timestamps(), frame.timestamps());
    for ch in Channel::ALL {
        assert_eq!(back.channel_valid(ch), frame.channel_valid(ch));
        for (a, b) in back.channel(ch).iter().zip(frame.channel(ch)) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }
    let log_path = dir.path().join("truth.json");
    log.write_json(&log_path).unwrap();
    assert_eq!(GroundTruthLog::read_json(&log_path).unwrap(), log);
}

#[test]
fn segments_are_bounded_by_injected_gaps() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            days: 6,
            seed,
            gaps_per_day: 2.0,
            gap_min_steps: DEFAULT_MAX_GAP_STEPS + 1,
            gap_max_steps: 30,
            ..SynthConfig::default()
        };
        let (frame, log) = generate(&cfg).unwrap();
        let filled = interpolate_short_gaps(&regularize(&frame).unwrap(), DEFAULT_MAX_GAP_STEPS);
        let segments = extract_segments(&filled, MIN_SEGMENT_LENGTH).unwrap();

        // Expected: the complement of the logged gaps, dropping short pieces.
        let mut expected = Vec::new();
        let mut start = 0;
        for g in &log.gaps {
            if g.start_index > start {
                expected.push((start, g.start_index - 1));
            }
            start = g.start_index + g.length;
        }
        if start < frame.len() {
            expected.push((start, frame.len() - 1));
        }
        expected.retain(|(s, e)| e - s + 1 >= MIN_SEGMENT_LENGTH);
        let found: Vec<(usize, usize)> = segments.iter().map(|s| (s.start_index, s.end_index)).collect();
        assert_eq!(found, expected, "seed {seed}");
    }
}

#[test]
fn noiseless_persistence_error_is_the_mean_increment() {
    let cfg = SynthConfig {
        days: 3,
        temperature_noise: 0.0,
        co2_noise: 0.0,
        humidity_noise: 0.0,
        ..SynthConfig::default()
    };
    let (frame, log) = generate(&cfg).unwrap();
    let data = prepare(&frame, &PipelineConfig::default()).unwrap();
    let report = evaluate_persistence(&data.test, &data.scaler).unwrap();

    let n = frame.len();
    let total = n - WINDOW;
    let test_start = total - data.test.len();
    for c in 0..3 {
        let clean = log.clean(c);
        let increments: f64 = (test_start..total)
            .map(|o| (clean[o + WINDOW] - clean[o + WINDOW - 1]).abs())
            .sum();
        let expected = increments / data.test.len() as f64;
        let got = report.targets[c].metrics.mae;
        assert!((got - expected).abs() < 1e-9 * expected.max(1.0), "channel {c}: {got} vs {expected}");
    }
}

#[test]
fn default_dataset_has_expected_size() {
    let (frame, _) = generate(&SynthConfig::default()).unwrap();
    let data = prepare(&frame, &PipelineConfig::default()).unwrap();
    assert_eq!(frame.len(), 4032);
    assert_eq!(data.report.total_samples, 4032 - WINDOW);
    assert_eq!(
        (data.train.len(), data.validation.len(), data.test.len()),
        (3417, 301, 302)
    );
}
