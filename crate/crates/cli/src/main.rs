use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ieq_cli::config::{Overrides, RunConfig};
use ieq_cli::{cmd_benchmark, cmd_evaluate, cmd_prepare, cmd_synth, cmd_train, CliError, Workspace};
use ieq_core::models::ModelFamily;

/// Indoor air temperature, CO₂ and humidity forecasting with LSTM, GRU and
/// CNN-LSTM models.
#[derive(Parser, Debug)]
#[command(name = "ieq", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; every key is optional.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Work directory for all artifacts [default: `paths.work_dir`, then
    /// $IEQ_WORKDIR, then ./ieq-work].
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    /// Model seed for weight initialization.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic room dataset and its ground-truth log.
    Synth {
        /// Output directory (default: <work-dir>/synth).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Clean, window, scale and split a sensor CSV (synthetic data if none).
    Prepare {
        /// Raw sensor CSV, overriding `paths.input`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train one model family on the prepared data.
    Train {
        #[arg(long)]
        family: Option<ModelFamily>,
        /// Memorize the first 64 training samples (train = validation).
        #[arg(long)]
        overfit: bool,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        family: Option<ModelFamily>,
        /// Checkpoint file (default: the trained family's).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Predict on all cores; results are identical to the serial run.
        #[arg(long)]
        parallel: bool,
        /// Skip the per-sample series CSV.
        #[arg(long)]
        no_export: bool,
    },
    /// Train and evaluate all three families and write the comparison table.
    Benchmark {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        parallel: bool,
    },
}

fn overrides(common: &Common, command: &Command) -> Overrides {
    let mut o = Overrides {
        work_dir: common.work_dir.clone(),
        ..Overrides::default()
    };
    let mut train = |f: &TrainFlags| {
        o.model_seed = f.seed;
        o.shuffle_seed = f.shuffle_seed;
        o.max_epochs = f.epochs;
        o.initial_lr = f.lr;
        o.batch_size = f.batch_size;
    };
    match command {
        Command::Synth { days, seed, .. } => {
            o.synth_days = *days;
            o.synth_seed = *seed;
        }
        Command::Prepare { input } => o.input = input.clone(),
        Command::Train { family, flags, .. } => {
            train(flags);
            o.family = *family;
        }
        Command::Evaluate {
            family,
            parallel,
            no_export,
            ..
        } => {
            o.family = *family;
            o.parallel = *parallel;
            o.no_export = *no_export;
        }
        Command::Benchmark { flags, parallel } => {
            train(flags);
            o.parallel = *parallel;
        }
    }
    o
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    overrides(&cli.common, &cli.command).apply(&mut cfg);
    let quiet = cli.common.quiet;
    let mut progress = |line: &str| {
        if !quiet {
            eprintln!("{line}");
        }
    };
    let ws = Workspace::new(cfg.work_dir());
    match &cli.command {
        Command::Synth { out, .. } => {
            let dir = out.clone().unwrap_or_else(|| ws.synth_dir());
            let (frame, log) = cmd_synth(&cfg, &dir)?;
            println!(
                "wrote {} readings ({} occupancy events, {} gaps) to {}",
                frame.len(),
                log.events.len(),
                log.gaps.len(),
                dir.display()
            );
        }
        Command::Prepare { .. } => {
            let r = cmd_prepare(&cfg)?;
            println!(
                "{} raw records -> {} grid points, {} readings interpolated, {} segments, {} samples \
                 (train {}, validation {}, test {}) in {}",
                r.raw_records,
                r.grid_points,
                r.interpolated_readings,
                r.segments.len(),
                r.total_samples,
                r.train_samples,
                r.validation_samples,
                r.test_samples,
                ws.data_dir().display()
            );
            if !r.constant_features.is_empty() {
                eprintln!("warning: constant features: {}", r.constant_features.join(", "));
            }
        }
        Command::Train { overfit, .. } => {
            let t = cmd_train(&cfg, *overfit, &mut progress)?;
            let last = t.history.epochs.last().expect("at least one epoch");
            println!(
                "{}: {} epochs, best epoch {} (val MAE {:.6}), final train MAE {:.6}; checkpoint {}",
                cfg.model.family,
                t.history.len(),
                t.history.best_epoch,
                t.history.best_val_mae,
                last.train_mae,
                t.checkpoint.display()
            );
        }
        Command::Evaluate { checkpoint, .. } => {
            let r = cmd_evaluate(&cfg, checkpoint.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
        }
        Command::Benchmark { .. } => {
            let b = cmd_benchmark(&cfg, &mut progress)?;
            print!("{}", std::fs::read_to_string(&b.table).unwrap_or_default());
            println!("table: {}\nmodels: {}", b.table.display(), b.models.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
