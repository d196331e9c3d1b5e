//! Seeded central-difference checks of every hand-written backward pass.
//!
//! Each check draws a random instance from its seed and differentiates a
//! scalar `Σ r ⊙ output` with a random upstream `r`, so every output entry
//! contributes with a different weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{backward, forward, ModelFamily, ModelParams, ModelSpec};
use crate::numerics::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, gradient_check, Activation, Conv1dKernels,
    GradCheckConfig, GradCheckReport, Matrix,
};
use crate::training::mae_loss;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Small model of `family` (hidden 5, 4 filters, 6 steps, batch 3) with
/// parameters uniform in ±0.5, checked on every parameter.
pub fn model(family: ModelFamily, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let spec = ModelSpec {
        family,
        hidden_size: 5,
        conv_filters: 4,
        seed,
        ..ModelSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, steps) = (3, 6);
    let n = spec.layout().total();
    let theta = uniform(&mut rng, n, -0.5, 0.5);
    let inputs = uniform(&mut rng, batch * steps * spec.input_features, 0.0, 1.0);
    let r = Matrix::from_vec(batch, spec.output_size, uniform(&mut rng, batch * spec.output_size, -1.0, 1.0))?;

    let params = ModelParams::unflatten(spec, theta.clone())?;
    let (_, cache) = forward(&params, &inputs, steps)?;
    let analytic = backward(&params, &cache, &r)?;
    let objective = |p: &[f64]| {
        let params = ModelParams::unflatten(spec, p.to_vec()).expect("layout-sized vector");
        let (out, _) = forward(&params, &inputs, steps).expect("valid inputs");
        dot(out.data(), r.data())
    };
    gradient_check(objective, &analytic, &theta, cfg)
}

/// MAE loss with respect to predictions, keeping every `|p − t|` above
/// 1e-3 so no probe crosses the kink.
pub fn mae(seed: u64, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..9);
    let t = uniform(&mut rng, b * 3, -1.0, 1.0);
    let p: Vec<f64> = t
        .iter()
        .map(|&ti| {
            let d = rng.random_range(1e-3..1.0);
            if rng.random_bool(0.5) {
                ti + d
            } else {
                ti - d
            }
        })
        .collect();
    let target = Matrix::from_vec(b, 3, t)?;
    let (_, grad) = mae_loss(&Matrix::from_vec(b, 3, p.clone())?, &target)?;
    let objective = |q: &[f64]| {
        let m = Matrix::from_vec(b, 3, q.to_vec()).expect("shape");
        mae_loss(&m, &target).expect("shape").0
    };
    gradient_check(objective, grad.data(), &p, cfg)
}

/// Valid stride-1 convolution, checked on input, kernels and bias together.
pub fn conv1d(seed: u64, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.random_range(1..4);
    let steps = width + rng.random_range(0..6);
    let (cin, cout) = (rng.random_range(1..5), rng.random_range(1..5));
    let x = uniform(&mut rng, steps * cin, -1.0, 1.0);
    let k = uniform(&mut rng, width * cin * cout, -1.0, 1.0);
    let bias = uniform(&mut rng, cout, -1.0, 1.0);
    let out_steps = steps + 1 - width;
    let r = Matrix::from_vec(out_steps, cout, uniform(&mut rng, out_steps * cout, -1.0, 1.0))?;

    let split = |p: &[f64]| {
        let (xs, rest) = p.split_at(steps * cin);
        let (ks, bs) = rest.split_at(width * cin * cout);
        (
            Matrix::from_vec(steps, cin, xs.to_vec()).expect("shape"),
            Conv1dKernels::new(width, cin, cout, ks.to_vec()).expect("shape"),
            bs.to_vec(),
        )
    };
    let theta = [x, k, bias].concat();
    let (xm, km, _) = split(&theta);
    let g = conv1d_backward(&xm, &km, &r)?;
    let analytic = [g.input.data(), &g.kernels, &g.bias].concat();
    let objective = |p: &[f64]| {
        let (xm, km, bm) = split(p);
        dot(conv1d_forward(&xm, &km, &bm).expect("shape").data(), r.data())
    };
    gradient_check(objective, &analytic, &theta, cfg)
}

/// `y = x·W + b`, checked on input, weight and bias together.
pub fn dense(seed: u64, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, i, o) = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..5));
    let theta = uniform(&mut rng, b * i + i * o + o, -1.0, 1.0);
    let r = Matrix::from_vec(b, o, uniform(&mut rng, b * o, -1.0, 1.0))?;
    let split = |p: &[f64]| {
        (
            Matrix::from_vec(b, i, p[..b * i].to_vec()).expect("shape"),
            Matrix::from_vec(i, o, p[b * i..b * i + i * o].to_vec()).expect("shape"),
            p[b * i + i * o..].to_vec(),
        )
    };
    let (x, w, _) = split(&theta);
    let g = dense_backward(&x, &w, &r)?;
    let analytic = [g.input.data(), g.weight.data(), &g.bias].concat();
    let objective = |p: &[f64]| {
        let (x, w, bias) = split(p);
        dot(dense_forward(&x, &w, &bias).expect("shape").data(), r.data())
    };
    gradient_check(objective, &analytic, &theta, cfg)
}

/// Elementwise activation on `draws` points in ±6, skipping the ReLU kink.
pub fn activation(kind: Activation, seed: u64, draws: usize, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..draws)
        .map(|_| loop {
            let v: f64 = rng.random_range(-6.0..6.0);
            if kind != Activation::Relu || v.abs() > 1e-3 {
                break v;
            }
        })
        .collect();
    let r = uniform(&mut rng, draws, -1.0, 1.0);
    let analytic: Vec<f64> = x
        .iter()
        .zip(&r)
        .map(|(&v, &ri)| ri * kind.derivative_from_output(kind.apply(v)))
        .collect();
    // Offsetting by the unperturbed outputs makes every untouched term exactly
    // zero, so the difference quotient is not swamped by rounding of the sum.
    let base: Vec<f64> = x.iter().map(|&v| kind.apply(v)).collect();
    let objective = |p: &[f64]| {
        p.iter()
            .zip(&r)
            .zip(&base)
            .map(|((&v, &ri), &b)| ri * (kind.apply(v) - b))
            .sum()
    };
    gradient_check(objective, &analytic, &x, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    pub worst_relative_error: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn collect(name: &str, reports: impl IntoIterator<Item = Result<GradCheckReport>>) -> Result<SuiteEntry> {
    let mut e = SuiteEntry {
        name: name.to_string(),
        instances: 0,
        failures: 0,
        worst_relative_error: 0.0,
    };
    for r in reports {
        let r = r?;
        e.instances += 1;
        e.failures += usize::from(!r.passed);
        e.worst_relative_error = e.worst_relative_error.max(r.max_relative_error);
    }
    Ok(e)
}

/// `instances` seeded checks of every model family and layer, plus
/// activations on `100 · instances` points each.
pub fn run_suite(instances: u64, cfg: GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for family in ModelFamily::ALL {
        out.push(collect(family.label(), (0..instances).map(|s| model(family, 1000 + s, cfg)))?);
    }
    out.push(collect("MAE loss", (0..instances).map(|s| mae(2000 + s, cfg)))?);
    out.push(collect("Conv1d", (0..instances).map(|s| conv1d(3000 + s, cfg)))?);
    out.push(collect("Dense", (0..instances).map(|s| dense(4000 + s, cfg)))?);
    for (i, kind) in [Activation::Sigmoid, Activation::Tanh, Activation::Relu].into_iter().enumerate() {
        let name = format!("{kind:?}");
        out.push(collect(&name, (0..instances).map(|s| activation(kind, 5000 + 100 * i as u64 + s, 100, cfg)))?);
    }
    Ok(out)
}
