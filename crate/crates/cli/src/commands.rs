use std::path::{Path, PathBuf};
use std::time::Instant;

use ieq_core::evaluation::{
    evaluate, evaluate_persistence, export_series, write_comparison_table, MetricsReport,
};
use ieq_core::models::{init_params, load_checkpoint, save_checkpoint, ModelFamily, ModelParams};
use ieq_core::pipeline::{ingest_csv, prepare, PrepareReport, Scaler, TimeSeriesFrame, WindowedDataset};
use ieq_core::synthdata::{generate, GroundTruthLog};
use ieq_core::training::{fit_from, EpochRecord, TrainHistory};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Files under the work directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn split_file(&self, split: &str) -> PathBuf {
        self.data_dir().join(format!("{split}.bin"))
    }

    pub fn scaler_file(&self) -> PathBuf {
        self.data_dir().join("scaler.json")
    }

    pub fn prepare_report_file(&self) -> PathBuf {
        self.data_dir().join("prepare_report.json")
    }

    pub fn segments_file(&self) -> PathBuf {
        self.data_dir().join("segments.csv")
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.root.join("synth")
    }

    pub fn model_dir(&self, family: ModelFamily) -> PathBuf {
        self.root.join("models").join(family.name())
    }

    pub fn checkpoint_file(&self, family: ModelFamily) -> PathBuf {
        self.model_dir(family).join("checkpoint.ieqc")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn benchmark_dir(&self) -> PathBuf {
        self.root.join("benchmark")
    }
}

fn mkdir(stage: &str, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::at(stage, ieq_core::Error::Io { path: dir.to_path_buf(), source: e }))
}

fn write_json(stage: &str, path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::at(stage, e.into()))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::at(stage, ieq_core::Error::Io { path: path.to_path_buf(), source: e }))
}

/// Writes `room.csv` and `ground_truth.json` for `[synth]` into `out_dir`.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<(TimeSeriesFrame, GroundTruthLog), CliError> {
    let stage = "synth";
    cfg.synth.validate().map_err(|e| CliError::at(stage, e))?;
    mkdir(stage, out_dir)?;
    let (frame, log) = generate(&cfg.synth).map_err(|e| CliError::at(stage, e))?;
    frame.write_csv(&out_dir.join("room.csv")).map_err(|e| CliError::at(stage, e))?;
    log.write_json(&out_dir.join("ground_truth.json")).map_err(|e| CliError::at(stage, e))?;
    Ok((frame, log))
}

/// Ingests `paths.input` (or synthesizes data when none is given), runs the
/// preprocessing chain and writes the split datasets, scaler and report.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareReport, CliError> {
    let stage = "prepare";
    cfg.validate()?;
    let ws = Workspace::new(cfg.work_dir());
    let raw = match &cfg.paths.input {
        Some(path) => ingest_csv(path, &cfg.pipeline.schema).map_err(|e| CliError::at(stage, e))?,
        None => cmd_synth(cfg, &ws.synth_dir())?.0,
    };
    let prepared = prepare(&raw, &cfg.pipeline).map_err(|e| CliError::at(stage, e))?;
    mkdir(stage, &ws.data_dir())?;
    for (name, data) in [
        ("train", &prepared.train),
        ("validation", &prepared.validation),
        ("test", &prepared.test),
    ] {
        data.write_binary(&ws.split_file(name)).map_err(|e| CliError::at(stage, e))?;
    }
    prepared.scaler.save(&ws.scaler_file()).map_err(|e| CliError::at(stage, e))?;
    write_json(stage, &ws.prepare_report_file(), &prepared.report)?;
    write_segments(&ws.segments_file(), &prepared.report).map_err(|e| CliError::at(stage, e))?;
    Ok(prepared.report)
}

fn write_segments(path: &Path, report: &PrepareReport) -> ieq_core::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["start_index", "end_index", "start_time", "end_time", "length", "samples"])?;
    for s in &report.segments {
        w.serialize((s.start_index, s.end_index, s.start_time, s.end_time, s.length, s.samples))?;
    }
    w.flush().map_err(|e| ieq_core::Error::Io { path: path.to_path_buf(), source: e })
}

/// The three splits and the scaler written by `prepare`.
pub struct Prepared {
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub test: WindowedDataset,
    pub scaler: Scaler,
}

pub fn load_prepared(ws: &Workspace, stage: &str) -> Result<Prepared, CliError> {
    if !ws.scaler_file().is_file() {
        return Err(CliError {
            kind: crate::FailureKind::Data,
            stage: stage.into(),
            message: format!("no prepared data in {} (run `ieq prepare` first)", ws.data_dir().display()),
        });
    }
    let read = |split: &str| WindowedDataset::read_binary(&ws.split_file(split)).map_err(|e| CliError::at(stage, e));
    Ok(Prepared {
        train: read("train")?,
        validation: read("validation")?,
        test: read("test")?,
        scaler: Scaler::load(&ws.scaler_file()).map_err(|e| CliError::at(stage, e))?,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub checkpoint: PathBuf,
}

fn train_family(
    cfg: &RunConfig,
    family: ModelFamily,
    train: &WindowedDataset,
    validation: &WindowedDataset,
    out_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<TrainOutcome, CliError> {
    let stage = format!("train {family}");
    let spec = cfg.spec_for(family);
    let init = init_params(&spec).map_err(|e| CliError::at(&stage, e))?;
    let outcome = fit_from(init, train, validation, &cfg.training, |e: &EpochRecord| {
        progress(&format!(
            "{family} epoch {:>3}  train_mae {:.5}  val_mae {:.5}  val_rmse {:.5}  lr {:.2e}  {:.2}s",
            e.epoch, e.train_mae, e.val_mae, e.val_rmse, e.lr, e.seconds
        ))
    })
    .map_err(|e| CliError::at(&stage, e))?;

    mkdir(&stage, out_dir)?;
    let checkpoint = out_dir.join("checkpoint.ieqc");
    let h = &outcome.history;
    let mut meta = serde_json::Map::new();
    meta.insert("epochs_run".into(), h.len().into());
    meta.insert("best_epoch".into(), h.best_epoch.into());
    meta.insert("best_val_mae".into(), h.best_val_mae.into());
    meta.insert("stopped_early".into(), h.stopped_early.into());
    meta.insert("updates".into(), h.updates.into());
    meta.insert("shuffle_seed".into(), cfg.training.shuffle_seed.into());
    save_checkpoint(&outcome.params, meta, &checkpoint).map_err(|e| CliError::at(&stage, e))?;
    h.write_csv(&out_dir.join("history.csv")).map_err(|e| CliError::at(&stage, e))?;
    Ok(TrainOutcome {
        params: outcome.params,
        history: outcome.history,
        checkpoint,
    })
}

/// Trains `[model].family`. In overfit mode the first 64 training samples
/// serve as both training and validation set.
pub fn cmd_train(cfg: &RunConfig, overfit: bool, progress: &mut dyn FnMut(&str)) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let ws = Workspace::new(cfg.work_dir());
    let data = load_prepared(&ws, "train")?;
    let family = cfg.model.family;
    if overfit {
        let set = data.train.slice(0..data.train.len().min(64));
        train_family(cfg, family, &set, &set, &ws.model_dir(family), progress)
    } else {
        train_family(cfg, family, &data.train, &data.validation, &ws.model_dir(family), progress)
    }
}

/// Scores a checkpoint (default: the trained `[model].family`) on the test
/// split, writing `<family>_metrics.json` and, unless disabled, the series CSV.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<MetricsReport, CliError> {
    let stage = "evaluate";
    cfg.validate()?;
    let ws = Workspace::new(cfg.work_dir());
    let data = load_prepared(&ws, stage)?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ws.checkpoint_file(cfg.model.family));
    let (params, header) = load_checkpoint(&path).map_err(|e| CliError::at(stage, e))?;
    let family = params.spec().family;
    let mut report = evaluate(&params, family.label(), &data.test, &data.scaler, cfg.evaluation.parallel)
        .map_err(|e| CliError::at(stage, e))?;
    report.shuffle_seed = header.metadata.get("shuffle_seed").and_then(|v| v.as_u64());
    let dir = ws.reports_dir();
    mkdir(stage, &dir)?;
    report
        .write_json(&dir.join(format!("{}_metrics.json", family.name())))
        .map_err(|e| CliError::at(stage, e))?;
    if !cfg.evaluation.no_export {
        export_series(
            &params,
            &data.test,
            &data.scaler,
            &dir.join(format!("{}_series.csv", family.name())),
            cfg.evaluation.parallel,
        )
        .map_err(|e| CliError::at(stage, e))?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelRun {
    pub model: String,
    pub family: ModelFamily,
    pub parameters: usize,
    pub recurrent_parameters: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_seconds: f64,
    pub mean_epoch_seconds: f64,
    pub status: String,
}

#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub reports: Vec<MetricsReport>,
    pub persistence: MetricsReport,
    pub runs: Vec<ModelRun>,
    pub table: PathBuf,
    pub models: PathBuf,
}

/// Trains and evaluates LSTM, GRU and CNN-LSTM under one configuration and
/// writes `benchmark_table.csv` (metrics only, so identical runs give
/// identical bytes) and `benchmark_models.csv` (sizes and wall times).
/// A failing family is recorded and the first failure returned after the
/// remaining families have run.
pub fn cmd_benchmark(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<BenchmarkOutcome, CliError> {
    let stage = "benchmark";
    cfg.validate()?;
    let ws = Workspace::new(cfg.work_dir());
    let data = load_prepared(&ws, stage)?;
    let dir = ws.benchmark_dir();
    mkdir(stage, &dir)?;

    let mut reports = Vec::new();
    let mut runs = Vec::new();
    let mut first_error = None;
    for family in ModelFamily::ALL {
        let spec = cfg.spec_for(family);
        let layout = spec.layout();
        let mut run = ModelRun {
            model: family.label().into(),
            family,
            parameters: layout.total(),
            recurrent_parameters: layout.recurrent_count(),
            epochs: 0,
            best_epoch: 0,
            train_seconds: 0.0,
            mean_epoch_seconds: 0.0,
            status: "ok".into(),
        };
        let started = Instant::now();
        let result = train_family(cfg, family, &data.train, &data.validation, &dir.join(family.name()), progress)
            .and_then(|t| {
                run.train_seconds = started.elapsed().as_secs_f64();
                run.epochs = t.history.len();
                run.best_epoch = t.history.best_epoch;
                run.mean_epoch_seconds = t.history.mean_epoch_seconds();
                let mut r = evaluate(&t.params, family.label(), &data.test, &data.scaler, cfg.evaluation.parallel)
                    .map_err(|e| CliError::at(stage, e))?;
                r.shuffle_seed = Some(cfg.training.shuffle_seed);
                r.write_json(&dir.join(family.name()).join("metrics.json"))
                    .map_err(|e| CliError::at(stage, e))?;
                Ok(r)
            });
        match result {
            Ok(r) => {
                progress(&format!(
                    "{family}: global MAE {:.4}  RMSE {:.4}  R2 {:.4}",
                    r.global.mae, r.global.rmse, r.global.r2
                ));
                reports.push(r);
            }
            Err(e) => {
                run.status = format!("failed: {e}");
                progress(&format!("{family}: {e}"));
                first_error.get_or_insert(e);
            }
        }
        runs.push(run);
    }

    let persistence = evaluate_persistence(&data.test, &data.scaler).map_err(|e| CliError::at(stage, e))?;
    persistence
        .write_json(&dir.join("persistence_metrics.json"))
        .map_err(|e| CliError::at(stage, e))?;
    let table = dir.join("benchmark_table.csv");
    write_comparison_table(&reports, &table).map_err(|e| CliError::at(stage, e))?;
    let models = dir.join("benchmark_models.csv");
    write_runs(&models, &runs).map_err(|e| CliError::at(stage, e))?;
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(BenchmarkOutcome {
        reports,
        persistence,
        runs,
        table,
        models,
    })
}

fn write_runs(path: &Path, runs: &[ModelRun]) -> ieq_core::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "parameters",
        "recurrent_parameters",
        "epochs",
        "best_epoch",
        "train_seconds",
        "mean_epoch_seconds",
        "status",
    ])?;
    for r in runs {
        w.write_record([
            r.model.clone(),
            r.parameters.to_string(),
            r.recurrent_parameters.to_string(),
            r.epochs.to_string(),
            r.best_epoch.to_string(),
            format!("{:.3}", r.train_seconds),
            format!("{:.4}", r.mean_epoch_seconds),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| ieq_core::Error::Io { path: path.to_path_buf(), source: e })
}
