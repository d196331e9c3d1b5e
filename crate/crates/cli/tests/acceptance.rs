//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
//! if any fails. Runs the full synthetic benchmark twice (a few minutes).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ieq_cli::{cmd_benchmark, cmd_prepare, commands::load_prepared, RunConfig, Workspace};
use ieq_core::evaluation::{aggregate_global, Metrics, MetricsReport};
use ieq_core::gradcheck::run_suite;
use ieq_core::models::{ModelFamily, ModelSpec};
use ieq_core::numerics::GradCheckConfig;
use ieq_core::pipeline::{
    extract_segments, fit_scaler, interpolate_short_gaps, make_windows, sample_origins, split_sizes, Channel, Scaler,
    TimeSeriesFrame, WindowShape, NUM_FEATURES,
};
use ieq_core::training::{dataset_errors, fit, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Model; per-target (temperature, CO₂, humidity) MAE, MSE, R²; printed
/// global MAE, MSE, RMSE, R².
type Row = (&'static str, [(f64, f64, f64); 3], [f64; 4]);

/// Reference LSTM/GRU/Hybrid comparison table.
const TABLE: [Row; 3] = [
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

fn aggregation_identity() -> Check {
    let tol = 1e-4 + 1e-12;
    let mut worst: f64 = 0.0;
    for (model, per, global) in TABLE {
        let g = aggregate_global(&per.map(|(mae, mse, r2)| Metrics {
            mae,
            mse,
            rmse: mse.sqrt(),
            r2,
        }));
        let diffs = [g.mae - global[0], g.mse - global[1], g.r2 - global[3], global[1].sqrt() - global[2]];
        let d = diffs.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if d > tol {
            return Err(format!("{model}: deviation {d:.2e}"));
        }
        worst = worst.max(d);
    }
    Ok(format!("max deviation {worst:.1e} over 3 models"))
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let entries = run_suite(20, GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| format!("{} ({}/{})", e.name, e.failures, e.instances))
        .collect();
    let worst = entries.iter().map(|e| e.worst_relative_error).fold(0.0, f64::max);
    let ok = failed.is_empty() && entries.iter().all(|e| e.instances >= 20) && secs < 60.0;
    ensure(
        ok,
        format!(
            "{} checks x 20 instances, worst relative error {worst:.1e}, {secs:.1}s{}",
            entries.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
        ),
    )
}

/// First 64 training windows of the default synthetic room, memorized at a
/// constant 1e-3 for at most 2000 full-batch updates.
fn overfit(work: &Path) -> Check {
    let data = load_prepared(&Workspace::new(work), "overfit").map_err(|e| e.to_string())?;
    let set = data.train.slice(0..64);
    let cfg = TrainConfig {
        batch_size: 64,
        max_epochs: 2000,
        initial_lr: 1e-3,
        lr_patience: 2000,
        early_stop_patience: 2000,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    // the three families are independent, so they train side by side
    let runs: Vec<Result<(f64, u64), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = ModelFamily::ALL
            .map(|family| {
                let (set, cfg) = (&set, &cfg);
                s.spawn(move || {
                    let out = fit(&ModelSpec::new(family), set, set, cfg).map_err(|e| e.to_string())?;
                    let (mae, _) = dataset_errors(&out.params, set, 64).map_err(|e| e.to_string())?;
                    Ok((mae, out.history.updates))
                })
            })
            .into_iter()
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("panicked".into()))).collect()
    });
    let mut parts = Vec::new();
    let mut ok = true;
    for (family, run) in ModelFamily::ALL.into_iter().zip(runs) {
        let (mae, updates) = run?;
        ok &= mae < 1e-2 && updates <= 2000;
        parts.push(format!("{} {mae:.5} ({updates} updates)", family.label()));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(ok && secs < 120.0, format!("{}; {secs:.1}s", parts.join(", ")))
}

struct BenchRun {
    work: PathBuf,
    table: Vec<u8>,
    seconds: f64,
    outcome: ieq_cli::commands::BenchmarkOutcome,
}

fn benchmark_run(work: &Path) -> Result<BenchRun, String> {
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic-benchmark.toml");
    let mut cfg = RunConfig::load(&preset).map_err(|e| e.to_string())?;
    cfg.paths.work_dir = Some(work.to_path_buf());
    let start = Instant::now();
    cmd_prepare(&cfg).map_err(|e| e.to_string())?;
    let outcome = cmd_benchmark(&cfg, &mut |_| {}).map_err(|e| e.to_string())?;
    let seconds = start.elapsed().as_secs_f64();
    let table = std::fs::read(&outcome.table).map_err(|e| e.to_string())?;
    Ok(BenchRun {
        work: work.to_path_buf(),
        table,
        seconds,
        outcome,
    })
}

fn report<'a>(run: &'a BenchRun, model: &str) -> Result<&'a MetricsReport, String> {
    run.outcome
        .reports
        .iter()
        .find(|r| r.model == model)
        .ok_or_else(|| format!("no {model} report"))
}

fn synthetic_benchmark(run: &BenchRun) -> Check {
    let base = run.outcome.persistence.per_target();
    let mut ok = run.seconds < 300.0;
    let mut parts = Vec::new();
    for model in ["LSTM", "GRU"] {
        let per = report(run, model)?.per_target();
        let cells: Vec<String> = (0..3)
            .map(|t| {
                ok &= per[t].r2 >= 0.9 && per[t].mae < base[t].mae;
                format!("{:.4}/{:.4} R2 {:.3}", per[t].mae, base[t].mae, per[t].r2)
            })
            .collect();
        parts.push(format!("{model} [{}]", cells.join("; ")));
    }
    ensure(
        ok,
        format!("MAE model/persistence per target: {}; {:.0}s", parts.join(" "), run.seconds),
    )
}

fn qualitative_ordering(run: &BenchRun) -> Check {
    let mut ok = true;
    for hidden in [1, 8, 64, 100] {
        let count = |family| {
            ModelSpec {
                family,
                hidden_size: hidden,
                ..ModelSpec::default()
            }
            .layout()
            .recurrent_count()
        };
        ok &= 4 * count(ModelFamily::Gru) == 3 * count(ModelFamily::Lstm);
    }
    let epoch = |f: ModelFamily| {
        run.outcome
            .runs
            .iter()
            .find(|r| r.family == f)
            .map(|r| r.mean_epoch_seconds)
            .ok_or_else(|| format!("no {} run", f.label()))
    };
    let (gru, lstm) = (epoch(ModelFamily::Gru)?, epoch(ModelFamily::Lstm)?);
    let rec = |f| ModelSpec::new(f).layout().recurrent_count();
    ensure(
        ok && gru < lstm,
        format!(
            "recurrent params GRU {} vs LSTM {}; mean epoch GRU {:.3}s vs LSTM {:.3}s",
            rec(ModelFamily::Gru),
            rec(ModelFamily::Lstm),
            gru,
            lstm
        ),
    )
}

fn frame(values: [Vec<f64>; 3]) -> TimeSeriesFrame {
    let n = values[0].len() as i64;
    TimeSeriesFrame::new((0..n).map(|i| i * 300).collect(), values, 0).expect("valid frame")
}

fn cubic_gaps(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = 40;
        let (start, len) = (rng.random_range(2..30), rng.random_range(1..=6));
        let centre = [22.0, 800.0, 50.0];
        let scale = [3.0, 300.0, 10.0];
        let mut clean = Vec::new();
        let mut holed = Vec::new();
        for c in 0..3 {
            let k: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let x = (i as f64 - 20.0) / 20.0;
                    centre[c] + scale[c] * (k[0] + k[1] * x + k[2] * x * x + k[3] * x * x * x) / 4.0
                })
                .collect();
            let mut h = v.clone();
            h[start..start + len].fill(f64::NAN);
            clean.push(v);
            holed.push(h);
        }
        let filled = interpolate_short_gaps(&frame([holed[0].clone(), holed[1].clone(), holed[2].clone()]), 6);
        for ch in Channel::ALL {
            for i in start..start + len {
                if !filled.is_valid(i) {
                    return Err(format!("gap at {start}+{len} left unfilled"));
                }
                worst = worst.max((filled.channel(ch)[i] - clean[ch.index()][i]).abs());
            }
        }
    }
    Ok(worst)
}

fn scaler_round_trip(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let mins: Vec<f64> = (0..NUM_FEATURES).map(|_| rng.random_range(-100.0..1000.0)).collect();
        let maxs: Vec<f64> = mins.iter().map(|m| m + rng.random_range(1e-2..5000.0)).collect();
        let scaler = Scaler::new(&mins, &maxs).map_err(|e| e.to_string())?;
        for f in 0..NUM_FEATURES {
            let x = rng.random_range(mins[f] - 100.0..maxs[f] + 100.0);
            worst = worst.max((scaler.inverse_transform(f, scaler.transform(f, x)) - x).abs());
        }
    }
    Ok(worst)
}

/// Counts windows by testing every start index for 13 consecutive valid
/// points, independently of the segment bookkeeping.
fn window_counts(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let shape = WindowShape::default();
    let span = shape.window + shape.horizon;
    let mut trials = 0;
    for _ in 0..100 {
        let mut v = Vec::new();
        let mut lens = Vec::new();
        for _ in 0..rng.random_range(1..8) {
            let len = rng.random_range(1..60);
            v.extend(std::iter::repeat_n(21.0, len));
            lens.push(len);
            v.extend(std::iter::repeat_n(f64::NAN, rng.random_range(1..4)));
        }
        let f = frame([v.clone(), vec![500.0; v.len()], vec![40.0; v.len()]]);
        let brute = (0..v.len())
            .filter(|&i| i + span <= v.len() && (i..i + span).all(|j| f.is_valid(j)))
            .count();
        let formula: usize = lens.iter().map(|&l| l.saturating_sub(shape.window)).sum();
        let segments = extract_segments(&f, span).map_err(|e| e.to_string())?;
        let origins = sample_origins(&segments, shape).len();
        if brute != formula || origins != brute {
            return Err(format!("lengths {lens:?}: brute {brute}, formula {formula}, pipeline {origins}"));
        }
        if brute > 0 {
            let scaler = fit_scaler(&f, &segments, 1.0, shape).map_err(|e| e.to_string())?;
            let windows = make_windows(&f, &segments, &scaler, shape).map_err(|e| e.to_string())?;
            if windows.len() != brute {
                return Err(format!("make_windows built {} of {brute}", windows.len()));
            }
        }
        trials += 1;
    }
    Ok(trials)
}

fn pipeline_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cubic = cubic_gaps(&mut rng)?;
    let scaler = scaler_round_trip(&mut rng)?;
    let trials = window_counts(&mut rng)?;
    let mut splits = Vec::new();
    for n in [40usize, 1000, 123_789] {
        let expected = (85 * n / 100, 75 * n / 1000, n - 85 * n / 100 - 75 * n / 1000);
        let got = split_sizes(n, 0.85, 0.075);
        if got != expected {
            return Err(format!("split of {n}: {got:?}, expected {expected:?}"));
        }
        splits.push(format!("{}/{}/{}", got.0, got.1, got.2));
    }
    ensure(
        cubic <= 1e-8 && scaler <= 1e-10,
        format!(
            "cubic gap error {cubic:.1e}, scaler round trip {scaler:.1e}, {trials} window layouts, splits {}",
            splits.join(" ")
        ),
    )
}

fn determinism(first: &BenchRun, second: &BenchRun) -> Check {
    ensure(
        first.table == second.table && first.work != second.work,
        format!("benchmark_table.csv {} bytes, identical across two runs", first.table.len()),
    )
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut report_line = |name: &'static str, check: Check| {
        match &check {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => println!("FAIL  {name}: {d}"),
        }
        results.push((name, check));
    };

    report_line("aggregation identity", guarded(aggregation_identity));
    report_line("gradient suite", guarded(gradient_suite));
    report_line("pipeline oracles", guarded(pipeline_oracles));

    let dirs = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    let first = benchmark_run(dirs.0.path());
    match &first {
        Ok(run) => {
            report_line("synthetic benchmark", guarded(|| synthetic_benchmark(run)));
            report_line("qualitative ordering", guarded(|| qualitative_ordering(run)));
            report_line("overfit smoke test", guarded(|| overfit(&run.work)));
        }
        Err(e) => {
            for name in ["synthetic benchmark", "qualitative ordering", "overfit smoke test"] {
                report_line(name, Err(format!("benchmark run failed: {e}")));
            }
        }
    }
    let second = benchmark_run(dirs.1.path());
    let det = match (&first, &second) {
        (Ok(a), Ok(b)) => guarded(|| determinism(a, b)),
        (Err(e), _) | (_, Err(e)) => Err(format!("benchmark run failed: {e}")),
    };
    report_line("determinism", det);

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
