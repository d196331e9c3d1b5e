use ieq_core::evaluation::{
    aggregate_global, evaluate, evaluate_persistence, export_series, predict_dataset, Metrics, MetricsReport,
};
use ieq_core::models::{init_params, ModelFamily, ModelSpec};
use ieq_core::pipeline::{prepare, PipelineConfig, PreparedData, NUM_TARGETS};
use ieq_core::synthdata::{generate, SynthConfig};
use ieq_core::training::{fit, TrainConfig};
use ieq_core::Error;

fn prepared() -> PreparedData {
    let (frame, _) = generate(&SynthConfig { days: 3, ..SynthConfig::default() }).unwrap();
    prepare(&frame, &PipelineConfig::default()).unwrap()
}

fn m(mae: f64, mse: f64, r2: f64) -> Metrics {
    Metrics { mae, mse, rmse: mse.sqrt(), r2 }
}

/// Model; per-target (temperature, CO₂, humidity) MAE, MSE, R²; printed
/// global MAE, MSE, RMSE, R².
type Row = (&'static str, [(f64, f64, f64); 3], [f64; 4]);

/// Reference LSTM/GRU/Hybrid comparison table.
const REFERENCE: [Row; 3] = [
    (
        "LSTM",
        [(0.0644, 0.0102, 0.9747), (3.6760, 23.3138, 0.9823), (0.2591, 0.2059, 0.9842)],
        [1.3332, 7.8433, 2.8006, 0.9804],
    ),
    (
        "GRU",
        [(0.0362, 0.0032, 0.9921), (2.8950, 13.6871, 0.9896), (0.1646, 0.0935, 0.9928)],
        [1.0320, 4.5946, 2.1435, 0.9915],
    ),
    (
        "Hybrid",
        [(0.1470, 0.0368, 0.9087), (26.6146, 942.5850, 0.2849), (0.7337, 0.9144, 0.9298)],
        [9.1651, 314.5121, 17.7345, 0.7078],
    ),
];

#[test]
fn aggregation_reproduces_reference_globals() {
    for (model, per, global) in REFERENCE {
        let g = aggregate_global(&per.map(|(a, b, c)| m(a, b, c)));
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-4 + 1e-12;
        assert!(close(g.mae, global[0]), "{model} MAE {}", g.mae);
        assert!(close(g.mse, global[1]), "{model} MSE {}", g.mse);
        assert!(close(global[1].sqrt(), global[2]), "{model} RMSE");
        assert!(close(g.rmse, global[2]), "{model} RMSE {}", g.rmse);
        assert!(close(g.r2, global[3]), "{model} R2 {}", g.r2);
    }
}

fn check_invariants(r: &MetricsReport) {
    let per = r.per_target();
    for t in &per {
        assert!(((t.rmse - t.mse.sqrt()) / t.rmse.max(1e-300)).abs() < 1e-12);
        assert!(t.rmse >= t.mae);
        assert!(t.r2 <= 1.0);
    }
    let g = aggregate_global(&per);
    assert_eq!(g, r.global);
    assert_eq!(r.global.rmse, r.global.mse.sqrt());
}

#[test]
fn evaluation_is_deterministic_and_parallel_safe() {
    let data = prepared();
    let params = init_params(&ModelSpec::new(ModelFamily::Lstm)).unwrap();
    let a = evaluate(&params, "LSTM", &data.test, &data.scaler, false).unwrap();
    let b = evaluate(&params, "LSTM", &data.test, &data.scaler, false).unwrap();
    assert_eq!(a, b);
    let serial = predict_dataset(&params, &data.train, false).unwrap();
    let parallel = predict_dataset(&params, &data.train, true).unwrap();
    assert_eq!(
        serial.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        parallel.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    check_invariants(&a);
    assert_eq!(a.sample_count, data.test.len());
}

#[test]
fn export_matches_report() {
    let data = prepared();
    let params = init_params(&ModelSpec::new(ModelFamily::Gru)).unwrap();
    let report = evaluate(&params, "GRU", &data.test, &data.scaler, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    export_series(&params, &data.test, &data.scaler, &path, false).unwrap();

    let mut rdr = csv::Reader::from_path(&path).unwrap();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), data.test.len());
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    for c in 0..NUM_TARGETS {
        let mae = rows.iter().map(|r| (r[2 + 2 * c] - r[1 + 2 * c]).abs()).sum::<f64>() / rows.len() as f64;
        assert!((mae - report.targets[c].metrics.mae).abs() < 1e-9, "target {c}");
    }
}

#[test]
fn memorized_training_set_scores_near_zero() {
    let data = prepared();
    let set = data.train.select(&vec![10; 64]);
    let cfg = TrainConfig { max_epochs: 1500, initial_lr: 1e-3, early_stop_patience: 1500, ..TrainConfig::default() };
    let out = fit(&ModelSpec::new(ModelFamily::Gru), &set, &set, &cfg).unwrap();
    let r = evaluate(&out.params, "GRU", &set, &data.scaler, false).unwrap();
    // Normalized MAE below 1e-2 maps to under 1% of each channel's range.
    for (c, t) in r.targets.iter().enumerate() {
        let span = data.scaler.features[c].max - data.scaler.features[c].min;
        assert!(t.metrics.mae < 1e-2 * span, "{}: {}", t.target, t.metrics.mae);
    }
}

#[test]
fn feature_mismatch_is_rejected() {
    let data = prepared();
    let spec = ModelSpec { input_features: 5, ..ModelSpec::new(ModelFamily::Gru) };
    let params = init_params(&spec).unwrap();
    assert!(matches!(
        evaluate(&params, "GRU", &data.test, &data.scaler, false),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn persistence_is_beaten_by_nothing_when_signal_is_constant() {
    // Constant truth: R² is undefined and flagged, persistence is exact.
    let cfg = SynthConfig {
        days: 1,
        temperature_amplitude: 0.0,
        humidity_amplitude: 0.0,
        co2_events_per_day: 0.0,
        temperature_noise: 0.0,
        co2_noise: 0.0,
        humidity_noise: 0.0,
        ..SynthConfig::default()
    };
    let (frame, _) = generate(&cfg).unwrap();
    let data = prepare(&frame, &PipelineConfig::default()).unwrap();
    let r = evaluate_persistence(&data.test, &data.scaler).unwrap();
    for t in &r.targets {
        assert_eq!(t.metrics.mae, 0.0);
        assert!(t.metrics.r2.is_nan());
    }
    assert!(r.global.r2.is_nan());
}
