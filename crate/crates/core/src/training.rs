//! Mini-batch training: MAE loss, Adam, a reduce-on-plateau learning-rate
//! schedule and early stopping with best-checkpoint restoration.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{backward, forward, init_params, ModelParams, ModelSpec};
use crate::numerics::Matrix;
use crate::pipeline::{WindowedDataset, NUM_TARGETS};

/// Mean absolute error over every entry and its gradient
/// `sign(p − t) / n`, with `sign(0) = 0`.
pub fn mae_loss(predictions: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if predictions.shape() != targets.shape() {
        return Err(Error::invalid(format!(
            "predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    let n = predictions.data().len();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / n as f64;
    let mut grad = Matrix::zeros(predictions.rows(), predictions.cols());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(predictions.data()).zip(targets.data()) {
        let e = p - t;
        sum += e.abs();
        *g = if e > 0.0 {
            scale
        } else if e < 0.0 {
            -scale
        } else {
            0.0
        };
    }
    Ok((sum * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Parameters are left untouched
/// if any gradient entry is non-finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters, {} gradients, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` (floored at `min_lr`) once the
/// monitored value has gone `patience` epochs without a strict decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch's validation value and returns the learning rate for
    /// the next epoch.
    pub fn step(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best {
            self.best = value;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a new best value.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn step(&mut self, epoch: usize, value: f64) -> StopDecision {
        if value < self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return StopDecision::Continue;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// Whether the most recent [`step`](Self::step) set a new best.
    pub fn improved(&self) -> bool {
        self.stale == 0 && self.best_epoch.is_some()
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub early_stop_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 100,
            initial_lr: 1e-4,
            lr_factor: 0.5,
            lr_patience: 3,
            min_lr: 1e-6,
            early_stop_patience: 7,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            shuffle_seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(msg));
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return bad("min_lr must be positive and no larger than initial_lr");
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return bad("patiences must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
    pub updates: u64,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Mean wall time per epoch in seconds.
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
    }

    /// Everything except wall times, for reproducibility comparisons.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.best_epoch == other.best_epoch
            && self.stopped_early == other.stopped_early
            && self.updates == other.updates
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_mae.to_bits() == b.train_mae.to_bits()
                    && a.val_mae.to_bits() == b.val_mae.to_bits()
                    && a.val_rmse.to_bits() == b.val_rmse.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_mae", "val_mae", "val_rmse", "lr", "seconds"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_mae.to_string(),
                e.val_mae.to_string(),
                e.val_rmse.to_string(),
                e.lr.to_string(),
                format!("{:.6}", e.seconds),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trained (best-validation) parameters and the epoch log.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// MAE and RMSE over all entries of normalized predictions, evaluated in
/// fixed-size chunks.
pub fn dataset_errors(params: &ModelParams, data: &WindowedDataset, chunk: usize) -> Result<(f64, f64)> {
    let chunk = chunk.max(1);
    let (mut abs, mut sq) = (0.0, 0.0);
    for start in (0..data.len()).step_by(chunk) {
        let end = (start + chunk).min(data.len());
        let s = data.sample_len();
        let pred = crate::models::predict(params, &data.inputs()[start * s..end * s], data.window())?;
        let targets = &data.targets()[start * NUM_TARGETS..end * NUM_TARGETS];
        for (p, t) in pred.data().iter().zip(targets) {
            let e = p - t;
            abs += e.abs();
            sq += e * e;
        }
    }
    let n = (data.len() * NUM_TARGETS) as f64;
    Ok((abs / n, (sq / n).sqrt()))
}

/// Initializes `spec` and trains it; see [`fit_from`].
pub fn fit(spec: &ModelSpec, train: &WindowedDataset, validation: &WindowedDataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    fit_from(init_params(spec)?, train, validation, cfg, |_| {})
}

/// Trains from the given parameters. Each epoch reshuffles the training
/// samples with a generator seeded once from `shuffle_seed`, runs
/// forward → MAE → backward → Adam on every batch (the last may be short),
/// then scores the validation set and applies the scheduler and stopper.
/// The returned parameters are those of the best validation epoch.
pub fn fit_from(
    mut params: ModelParams,
    train: &WindowedDataset,
    validation: &WindowedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyDataset("training and validation sets must be nonempty".into()));
    }
    let features = params.spec().input_features;
    for (name, d) in [("training", train), ("validation", validation)] {
        if d.features() != features {
            return Err(Error::invalid(format!(
                "{name} set has {} features, model expects {features}",
                d.features()
            )));
        }
    }

    let adam = cfg.adam();
    let mut state = AdamState::new(params.len());
    let mut scheduler = PlateauScheduler::new(cfg.lr_factor, cfg.lr_patience, cfg.min_lr);
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = params.clone();
    let mut history = TrainHistory::default();
    let mut lr = cfg.initial_lr;
    let steps = train.window();
    let s = train.sample_len();
    let mut inputs = Vec::with_capacity(cfg.batch_size * s);
    let mut targets = Vec::with_capacity(cfg.batch_size * NUM_TARGETS);

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut abs_sum = 0.0;
        for (batch_no, idx) in order.chunks(cfg.batch_size).enumerate() {
            let abort = |reason: String| Error::TrainingAborted {
                epoch,
                batch: batch_no + 1,
                lr,
                reason,
            };
            inputs.clear();
            targets.clear();
            for &i in idx {
                inputs.extend_from_slice(train.input(i));
                targets.extend_from_slice(train.target(i));
            }
            let (pred, cache) = forward(&params, &inputs, steps)?;
            let target = Matrix::from_vec(idx.len(), NUM_TARGETS, targets.clone())?;
            let (loss, grad) = mae_loss(&pred, &target)?;
            if !loss.is_finite() {
                return Err(abort(format!("loss is {loss}")));
            }
            abs_sum += loss * (idx.len() * NUM_TARGETS) as f64;
            let g = backward(&params, &cache, &grad)?;
            adam_step(params.values_mut(), &g, &mut state, lr, &adam).map_err(|e| abort(e.to_string()))?;
            history.updates += 1;
        }
        let train_mae = abs_sum / (train.len() * NUM_TARGETS) as f64;
        let (val_mae, val_rmse) = dataset_errors(&params, validation, 256)?;
        if !val_mae.is_finite() {
            return Err(Error::TrainingAborted {
                epoch,
                batch: 0,
                lr,
                reason: format!("validation MAE is {val_mae}"),
            });
        }
        let record = EpochRecord {
            epoch,
            train_mae,
            val_mae,
            val_rmse,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        history.epochs.push(record);
        on_epoch(&record);

        let decision = stopper.step(epoch, val_mae);
        if stopper.improved() {
            best.values_mut().copy_from_slice(params.flatten());
        }
        if decision == StopDecision::Stop {
            history.stopped_early = true;
            break;
        }
        lr = scheduler.step(val_mae, lr);
    }
    let (best_epoch, best_val) = stopper.best().expect("at least one epoch ran");
    history.best_epoch = best_epoch;
    history.best_val_mae = best_val;
    Ok(FitOutcome { params: best, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn mae_trivial_cases() {
        let p = m(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let (l, g) = mae_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));

        let (l, g) = mae_loss(&m(1, 3, &[1.0; 3]), &m(1, 3, &[0.0; 3])).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        assert!(mae_loss(&m(1, 3, &[0.0; 3]), &m(3, 1, &[0.0; 3])).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -4.0, 1e-3];
        let mut st = AdamState::new(3);
        adam_step(&mut p, &g, &mut st, 0.01, &AdamConfig::default()).unwrap();
        for (after, (before, gi)) in p.iter().zip([1.0, -2.0, 0.5].iter().zip(&g)) {
            let step = before - after;
            assert!((step.abs() - 0.01).abs() < 1e-6 * 0.01 / gi.abs().min(1.0) + 1e-9);
            assert_eq!(step.signum(), gi.signum());
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![0.25, -0.75];
        let mut st = AdamState::new(2);
        for _ in 0..100 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![0.25, -0.75]);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = vec![1.0, 1.0];
        let mut st = AdamState::new(2);
        let err = adam_step(&mut p, &[f64::NAN, 0.0], &mut st, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn adam_descends_quadratic_after_first_step() {
        let mut p = vec![1.0, 1.0];
        let mut st = AdamState::new(2);
        let f = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let mut values = vec![f(&p)];
        for _ in 0..50 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam_step(&mut p, &g, &mut st, 0.01, &AdamConfig::default()).unwrap();
            values.push(f(&p));
        }
        assert!(values.windows(2).skip(1).all(|w| w[1] < w[0]), "{values:?}");
    }

    #[test]
    fn plateau_examples() {
        let mut s = PlateauScheduler::new(0.5, 3, 1e-6);
        let mut lr = 1e-4;
        for v in [1.0, 0.9, 0.8] {
            lr = s.step(v, lr);
        }
        assert_eq!(lr, 1e-4);

        let mut s = PlateauScheduler::new(0.5, 3, 1e-6);
        let lrs: Vec<f64> = [1.0, 1.0, 1.0, 1.0]
            .iter()
            .scan(1e-4, |lr, &v| {
                *lr = s.step(v, *lr);
                Some(*lr)
            })
            .collect();
        assert_eq!(lrs, vec![1e-4, 1e-4, 1e-4, 5e-5]);

        let mut s = PlateauScheduler::new(0.5, 3, 1e-6);
        let mut lr = 1e-4;
        let mut seen = vec![lr];
        for _ in 0..100 {
            lr = s.step(1.0, lr);
            seen.push(lr);
        }
        assert_eq!(lr, 1e-6);
        for w in seen.windows(2) {
            assert!(w[1] == w[0] || w[1] == w[0] * 0.5 || w[1] == 1e-6);
        }
    }

    #[test]
    fn stopper_examples() {
        let mut st = EarlyStopper::new(7);
        for e in 1..=100 {
            assert_eq!(st.step(e, 1.0 / e as f64), StopDecision::Continue);
        }

        let mut st = EarlyStopper::new(7);
        let mut stopped = None;
        for e in 1..=100 {
            let v = if e <= 5 { 1.0 / e as f64 } else { 0.2 };
            if st.step(e, v) == StopDecision::Stop {
                stopped = Some(e);
                break;
            }
        }
        assert_eq!(stopped, Some(12));
        assert_eq!(st.best(), Some((5, 0.2)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr_factor: 1.0, ..Default::default() },
            TrainConfig { min_lr: 1.0, ..Default::default() },
            TrainConfig { lr_patience: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
