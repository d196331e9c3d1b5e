use ieq_core::models::{init_params, ModelFamily, ModelSpec};
use ieq_core::pipeline::{prepare, PipelineConfig, WindowedDataset};
use ieq_core::synthdata::{generate, SynthConfig};
use ieq_core::training::{dataset_errors, fit, fit_from, TrainConfig};
use ieq_core::Error;

fn prepared(days: usize) -> ieq_core::pipeline::PreparedData {
    let (frame, _) = generate(&SynthConfig { days, ..SynthConfig::default() }).unwrap();
    prepare(&frame, &PipelineConfig::default()).unwrap()
}

fn copies(data: &WindowedDataset, i: usize, n: usize) -> WindowedDataset {
    data.select(&vec![i; n])
}

fn overfit_cfg() -> TrainConfig {
    TrainConfig {
        max_epochs: 2000,
        initial_lr: 1e-3,
        early_stop_patience: 2000,
        ..TrainConfig::default()
    }
}

#[test]
fn memorizes_one_sample_repeated() {
    let data = prepared(2);
    let set = copies(&data.train, 5, 64);
    for family in ModelFamily::ALL {
        let out = fit(&ModelSpec::new(family), &set, &set, &overfit_cfg()).unwrap();
        assert!(out.history.updates <= 2000);
        let (mae, _) = dataset_errors(&out.params, &set, 64).unwrap();
        assert!(mae < 1e-2, "{family}: MAE {mae} after {} updates", out.history.updates);
    }
}

#[test]
fn identical_seeds_reproduce_history_and_weights() {
    let data = prepared(2);
    let train = data.train.slice(0..200);
    let cfg = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
    let spec = ModelSpec::new(ModelFamily::Gru);
    let a = fit(&spec, &train, &data.validation, &cfg).unwrap();
    let b = fit(&spec, &train, &data.validation, &cfg).unwrap();
    assert!(a.history.same_trajectory(&b.history));
    assert_eq!(a.params.flatten(), b.params.flatten());

    let c = fit(&spec, &train, &data.validation, &TrainConfig { shuffle_seed: 99, ..cfg }).unwrap();
    assert_ne!(a.params.flatten(), c.params.flatten());
}

#[test]
fn history_rules() {
    let data = prepared(2);
    let train = data.train.slice(0..128);
    let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
    let out = fit(&ModelSpec::new(ModelFamily::Lstm), &train, &data.validation, &cfg).unwrap();
    assert_eq!(out.history.len(), 1);
    // 128 samples = 2 full batches; 130 adds a short final batch.
    assert_eq!(out.history.updates, 2);
    let out = fit(&ModelSpec::new(ModelFamily::Lstm), &data.train.slice(0..130), &data.validation, &cfg).unwrap();
    assert_eq!(out.history.updates, 3);

    let cfg = TrainConfig { max_epochs: 30, initial_lr: 1e-2, ..TrainConfig::default() };
    let out = fit(&ModelSpec::new(ModelFamily::Gru), &train, &data.validation, &cfg).unwrap();
    let h = &out.history;
    assert!(h.len() <= 30);
    for w in h.epochs.windows(2) {
        assert!(w[1].lr == w[0].lr || w[1].lr == w[0].lr * 0.5 || w[1].lr == 1e-6);
    }
    let min = h.epochs.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
    assert_eq!(h.best_val_mae, min);
    assert_eq!(h.epochs[h.best_epoch - 1].val_mae, min);
    if h.stopped_early {
        assert!(h.len() >= 8);
        assert_eq!(h.len(), h.best_epoch + 7);
    }
    // The returned weights are the best epoch's.
    let (val_mae, _) = dataset_errors(&out.params, &data.validation, 256).unwrap();
    assert_eq!(val_mae, min);
}

#[test]
fn non_finite_training_aborts_with_diagnostics() {
    let data = prepared(2);
    let train = data.train.slice(0..100);
    let spec = ModelSpec::new(ModelFamily::Gru);
    let mut params = init_params(&spec).unwrap();
    params.tensor_mut("b_out").unwrap()[1] = f64::NAN;
    let err = fit_from(params, &train, &data.validation, &TrainConfig::default(), |_| {}).unwrap_err();
    match err {
        Error::TrainingAborted { epoch, batch, lr, .. } => {
            assert_eq!((epoch, batch), (1, 1));
            assert_eq!(lr, 1e-4);
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn empty_sets_and_bad_configs_are_rejected() {
    let data = prepared(2);
    let spec = ModelSpec::new(ModelFamily::Gru);
    let empty = data.train.slice(0..0);
    assert!(matches!(
        fit(&spec, &empty, &data.validation, &TrainConfig::default()),
        Err(Error::EmptyDataset(_))
    ));
    let bad = TrainConfig { lr_factor: 1.5, ..TrainConfig::default() };
    assert!(matches!(fit(&spec, &data.train, &data.validation, &bad), Err(Error::Config(_))));
}

#[test]
fn gru_epoch_is_faster_than_lstm() {
    let data = prepared(3);
    let cfg = TrainConfig { max_epochs: 3, early_stop_patience: 10, ..TrainConfig::default() };
    let time = |family| {
        let out = fit(&ModelSpec::new(family), &data.train, &data.validation, &cfg).unwrap();
        // Median of the epochs to damp scheduler noise.
        let mut s: Vec<f64> = out.history.epochs.iter().map(|e| e.seconds).collect();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    let (gru, lstm) = (time(ModelFamily::Gru), time(ModelFamily::Lstm));
    assert!(gru < lstm, "GRU {gru:.4}s vs LSTM {lstm:.4}s per epoch");
}
