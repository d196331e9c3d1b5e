//! LSTM, GRU and CNN-LSTM forecasters mapping a `steps × features` window to
//! three next-step predictions through a linear head.
//!
//! All parameters of a model live in one flat vector ([`ModelParams`]) whose
//! ordering is fixed by [`Layout`]; gradients use the same layout, which is
//! what the optimizer and the gradient checker consume.

mod checkpoint;
mod recurrent;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, LAYOUT_VERSION};

use crate::error::{Error, Result};
use crate::numerics::{accumulate_col_sums, add_row_bias, gemm, im2col, MatMut, MatRef, Matrix};
use recurrent::{GruCache, LstmCache, RecurrentGrads, RecurrentWeights, Seq};

pub const OUTPUT_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Lstm,
    Gru,
    CnnLstm,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::Lstm, ModelFamily::Gru, ModelFamily::CnnLstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Lstm => "lstm",
            ModelFamily::Gru => "gru",
            ModelFamily::CnnLstm => "cnn_lstm",
        }
    }

    /// Column label used in the comparison table.
    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::Lstm => "LSTM",
            ModelFamily::Gru => "GRU",
            ModelFamily::CnnLstm => "Hybrid",
        }
    }

    pub fn gates(self) -> usize {
        match self {
            ModelFamily::Gru => 3,
            ModelFamily::Lstm | ModelFamily::CnnLstm => 4,
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lstm" => Ok(ModelFamily::Lstm),
            "gru" => Ok(ModelFamily::Gru),
            "cnn_lstm" | "hybrid" | "cnnlstm" => Ok(ModelFamily::CnnLstm),
            other => Err(Error::config(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub input_features: usize,
    pub hidden_size: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub output_size: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            family: ModelFamily::Gru,
            input_features: crate::pipeline::NUM_FEATURES,
            hidden_size: 64,
            conv_filters: 32,
            conv_kernel: 3,
            output_size: OUTPUT_SIZE,
            seed: 42,
        }
    }
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        ModelSpec {
            family,
            ..ModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.input_features == 0 {
            return Err(Error::config("hidden_size and input_features must be at least 1"));
        }
        if self.output_size != OUTPUT_SIZE {
            return Err(Error::config(format!("output_size must be {OUTPUT_SIZE}")));
        }
        if self.family == ModelFamily::CnnLstm && (self.conv_filters == 0 || self.conv_kernel == 0) {
            return Err(Error::config("conv_filters and conv_kernel must be at least 1"));
        }
        Ok(())
    }

    /// Width of the sequence the recurrent block consumes.
    pub fn recurrent_input(&self) -> usize {
        match self.family {
            ModelFamily::CnnLstm => self.conv_filters,
            _ => self.input_features,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

/// Offsets of every named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub conv_kernels: Range<usize>,
    pub conv_bias: Range<usize>,
    pub w: Range<usize>,
    pub u: Range<usize>,
    pub b: Range<usize>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    tensors: Vec<TensorInfo>,
}

impl Layout {
    fn new(spec: &ModelSpec) -> Self {
        let h = spec.hidden_size;
        let g = spec.family.gates() * h;
        let fr = spec.recurrent_input();
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: &str, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            let range = offset..offset + len;
            offset += len;
            tensors.push(TensorInfo {
                name: name.into(),
                shape,
                range: range.clone(),
            });
            range
        };
        let (conv_kernels, conv_bias) = if spec.family == ModelFamily::CnnLstm {
            (
                push("conv_kernels", vec![spec.conv_kernel, spec.input_features, spec.conv_filters]),
                push("conv_bias", vec![spec.conv_filters]),
            )
        } else {
            (0..0, 0..0)
        };
        let w = push("w", vec![fr, g]);
        let u = push("u", vec![h, g]);
        let b = push("b", vec![g]);
        let w_out = push("w_out", vec![h, spec.output_size]);
        let b_out = push("b_out", vec![spec.output_size]);
        Layout {
            conv_kernels,
            conv_bias,
            w,
            u,
            b,
            w_out,
            b_out,
            tensors,
        }
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.b_out.end
    }

    /// Parameters of the recurrent block (`w`, `u`, `b`).
    pub fn recurrent_count(&self) -> usize {
        self.b.end - self.w.start
    }

    pub fn head_count(&self) -> usize {
        self.b_out.end - self.w_out.start
    }
}

/// A model's specification with its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    /// Rebuilds parameters from a flat vector in [`Layout`] order.
    pub fn unflatten(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if values.len() != layout.total() {
            return Err(Error::invalid(format!(
                "{} model expects {} parameters, got {}",
                spec.family,
                layout.total(),
                values.len()
            )));
        }
        Ok(ModelParams { spec, layout, values })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        let n = spec.layout().total();
        ModelParams::unflatten(spec, vec![0.0; n])
    }

    pub fn flatten(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.values[t.range.clone()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.tensors.iter().find(|t| t.name == name)?.range.clone();
        Some(&mut self.values[range])
    }

    fn recurrent(&self) -> RecurrentWeights<'_> {
        RecurrentWeights {
            w: &self.values[self.layout.w.clone()],
            u: &self.values[self.layout.u.clone()],
            b: &self.values[self.layout.b.clone()],
            hidden: self.spec.hidden_size,
            features: self.spec.recurrent_input(),
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-limit..limit);
    }
}

/// Orthonormal `n × n` matrix from a Gaussian draw (modified Gram–Schmidt on
/// the rows), written into columns `[col, col + n)` of a `n × stride` matrix.
fn orthogonal_block(rng: &mut ChaCha8Rng, out: &mut [f64], n: usize, stride: usize, col: usize) {
    let mut q: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= dot * b;
            }
        }
        let norm = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut q[i] {
            *v /= norm;
        }
    }
    for (r, row) in q.iter().enumerate() {
        out[r * stride + col..r * stride + col + n].copy_from_slice(row);
    }
}

/// Seeded initialization: Glorot-uniform input, convolution and head weights;
/// per-gate orthogonal recurrent blocks; zero biases except an LSTM
/// forget-gate bias of 1.
pub fn init_params(spec: &ModelSpec) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(*spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = p.layout.clone();
    let h = spec.hidden_size;
    let gates = spec.family.gates();
    if spec.family == ModelFamily::CnnLstm {
        glorot(
            &mut rng,
            &mut p.values[layout.conv_kernels.clone()],
            spec.conv_kernel * spec.input_features,
            spec.conv_kernel * spec.conv_filters,
        );
    }
    glorot(&mut rng, &mut p.values[layout.w.clone()], spec.recurrent_input(), gates * h);
    for g in 0..gates {
        orthogonal_block(&mut rng, &mut p.values[layout.u.clone()], h, gates * h, g * h);
    }
    if gates == 4 {
        p.values[layout.b.start + h..layout.b.start + 2 * h].fill(1.0);
    }
    glorot(&mut rng, &mut p.values[layout.w_out.clone()], h, spec.output_size);
    Ok(p)
}

#[derive(Debug, Clone)]
enum RecurrentCache {
    Lstm(LstmCache),
    Gru(GruCache),
}

#[derive(Debug, Clone)]
struct ConvCache {
    /// im2col patches, `(batch·out_steps) × (K·F)`.
    patches: Vec<f64>,
    /// ReLU output, `batch × out_steps × filters`; this is the LSTM input.
    activated: Vec<f64>,
    out_steps: usize,
}

/// Intermediates of one batched forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    spec: ModelSpec,
    batch: usize,
    steps: usize,
    inputs: Vec<f64>,
    conv: Option<ConvCache>,
    recurrent: RecurrentCache,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Final hidden states, `batch × hidden`.
    pub fn final_hidden(&self) -> &[f64] {
        match &self.recurrent {
            RecurrentCache::Lstm(c) => c.final_hidden(),
            RecurrentCache::Gru(c) => c.final_hidden(),
        }
    }

    /// Every hidden state including the initial one, `(steps + 1) × batch × hidden`.
    pub fn hidden_states(&self) -> &[f64] {
        match &self.recurrent {
            RecurrentCache::Lstm(c) => c.hidden_states(),
            RecurrentCache::Gru(c) => c.hidden_states(),
        }
    }

    /// The sequence fed to the recurrent block (`None` unless CNN-LSTM).
    pub fn conv_output(&self) -> Option<&[f64]> {
        self.conv.as_ref().map(|c| c.activated.as_slice())
    }
}

fn check_inputs(spec: &ModelSpec, inputs: &[f64], steps: usize) -> Result<usize> {
    let per_sample = steps * spec.input_features;
    if steps == 0 || per_sample == 0 || !inputs.len().is_multiple_of(per_sample) {
        return Err(Error::invalid(format!(
            "input of {} values is not a whole number of {steps}x{} windows",
            inputs.len(),
            spec.input_features
        )));
    }
    if spec.family == ModelFamily::CnnLstm && steps < spec.conv_kernel {
        return Err(Error::invalid(format!(
            "window of {steps} steps is shorter than the convolution kernel ({})",
            spec.conv_kernel
        )));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("window contains non-finite values"));
    }
    Ok(inputs.len() / per_sample)
}

/// Batched forward pass over `inputs` laid out `batch × steps × features`.
/// Returns `batch × 3` predictions and the cache for [`backward`].
pub fn forward(params: &ModelParams, inputs: &[f64], steps: usize) -> Result<(Matrix, ForwardCache)> {
    let spec = params.spec;
    let batch = check_inputs(&spec, inputs, steps)?;
    let h = spec.hidden_size;
    let l = &params.layout;

    let mut conv = None;
    let (seq_data, seq_steps) = if spec.family == ModelFamily::CnnLstm {
        let k = spec.conv_kernel;
        let out_steps = steps + 1 - k;
        let patch = k * spec.input_features;
        let patches = im2col(inputs, batch, steps, spec.input_features, k);
        let mut activated = vec![0.0; batch * out_steps * spec.conv_filters];
        gemm(
            1.0,
            MatRef::row_major(&patches, batch * out_steps, patch),
            MatRef::row_major(&params.values[l.conv_kernels.clone()], patch, spec.conv_filters),
            0.0,
            MatMut::row_major(&mut activated, batch * out_steps, spec.conv_filters),
        );
        add_row_bias(&mut activated, &params.values[l.conv_bias.clone()]);
        for v in &mut activated {
            *v = v.max(0.0);
        }
        conv = Some(ConvCache {
            patches,
            activated,
            out_steps,
        });
        (None, out_steps)
    } else {
        (Some(inputs), steps)
    };
    let seq = Seq {
        data: seq_data.unwrap_or_else(|| &conv.as_ref().expect("conv cache").activated),
        batch,
        steps: seq_steps,
        features: spec.recurrent_input(),
    };
    let rw = params.recurrent();
    let recurrent = match spec.family {
        ModelFamily::Gru => RecurrentCache::Gru(recurrent::gru_forward(&rw, seq, None)),
        _ => RecurrentCache::Lstm(recurrent::lstm_forward(&rw, seq)),
    };
    let last = match &recurrent {
        RecurrentCache::Lstm(c) => c.final_hidden(),
        RecurrentCache::Gru(c) => c.final_hidden(),
    };
    let mut out = Matrix::zeros(batch, spec.output_size);
    gemm(
        1.0,
        MatRef::row_major(last, batch, h),
        MatRef::row_major(&params.values[l.w_out.clone()], h, spec.output_size),
        0.0,
        out.view_mut(),
    );
    add_row_bias(out.data_mut(), &params.values[l.b_out.clone()]);
    let cache = ForwardCache {
        spec,
        batch,
        steps,
        inputs: inputs.to_vec(),
        conv,
        recurrent,
    };
    Ok((out, cache))
}

/// Predictions only.
pub fn predict(params: &ModelParams, inputs: &[f64], steps: usize) -> Result<Matrix> {
    forward(params, inputs, steps).map(|(p, _)| p)
}

/// Gradient of `Σ prediction_grad ⊙ prediction` with respect to every
/// parameter, in [`Layout`] order.
pub fn backward(params: &ModelParams, cache: &ForwardCache, prediction_grad: &Matrix) -> Result<Vec<f64>> {
    let spec = params.spec;
    if cache.spec != spec {
        return Err(Error::invalid("forward cache was produced by a different model specification"));
    }
    if prediction_grad.shape() != (cache.batch, spec.output_size) {
        return Err(Error::invalid(format!(
            "prediction gradient shape {:?}, expected ({}, {})",
            prediction_grad.shape(),
            cache.batch,
            spec.output_size
        )));
    }
    let l = &params.layout;
    let h = spec.hidden_size;
    let batch = cache.batch;
    let mut grad = vec![0.0; l.total()];

    // linear head
    let last = cache.final_hidden();
    {
        let (_, rest) = grad.split_at_mut(l.w_out.start);
        let (gw_out, gb_out) = rest.split_at_mut(l.w_out.len());
        gemm(
            1.0,
            MatRef::row_major(last, batch, h).t(),
            prediction_grad.view(),
            0.0,
            MatMut::row_major(gw_out, h, spec.output_size),
        );
        accumulate_col_sums(&mut gb_out[..spec.output_size], prediction_grad.view());
    }
    let mut dh = vec![0.0; batch * h];
    gemm(
        1.0,
        prediction_grad.view(),
        MatRef::row_major(&params.values[l.w_out.clone()], h, spec.output_size).t(),
        0.0,
        MatMut::row_major(&mut dh, batch, h),
    );

    let (seq_data, seq_steps) = match &cache.conv {
        Some(c) => (c.activated.as_slice(), c.out_steps),
        None => (cache.inputs.as_slice(), cache.steps),
    };
    let fr = spec.recurrent_input();
    let seq = Seq {
        data: seq_data,
        batch,
        steps: seq_steps,
        features: fr,
    };
    let mut dseq = cache.conv.as_ref().map(|_| vec![0.0; batch * seq_steps * fr]);
    {
        let (front, rest) = grad.split_at_mut(l.w.start);
        let (gw, rest) = rest.split_at_mut(l.w.len());
        let (gu, rest) = rest.split_at_mut(l.u.len());
        let gb = &mut rest[..l.b.len()];
        let grads = RecurrentGrads { w: gw, u: gu, b: gb };
        let rw = params.recurrent();
        match &cache.recurrent {
            RecurrentCache::Lstm(c) => recurrent::lstm_backward(&rw, seq, c, &dh, grads, dseq.as_deref_mut()),
            RecurrentCache::Gru(c) => recurrent::gru_backward(&rw, seq, c, &dh, grads, dseq.as_deref_mut()),
        }

        if let (Some(conv), Some(mut dact)) = (&cache.conv, dseq) {
            for (d, a) in dact.iter_mut().zip(&conv.activated) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            let k = spec.conv_kernel;
            let patch = k * spec.input_features;
            let rows = batch * conv.out_steps;
            let (gk, gcb) = front.split_at_mut(l.conv_bias.start);
            gemm(
                1.0,
                MatRef::row_major(&conv.patches, rows, patch).t(),
                MatRef::row_major(&dact, rows, spec.conv_filters),
                0.0,
                MatMut::row_major(&mut gk[l.conv_kernels.clone()], patch, spec.conv_filters),
            );
            accumulate_col_sums(
                &mut gcb[..spec.conv_filters],
                MatRef::row_major(&dact, rows, spec.conv_filters),
            );
        }
    }
    Ok(grad)
}

fn single_window(params: &ModelParams, family: ModelFamily, window: &Matrix) -> Result<([f64; OUTPUT_SIZE], ForwardCache)> {
    if params.spec.family != family {
        return Err(Error::invalid(format!(
            "parameters belong to a {} model, not {family}",
            params.spec.family
        )));
    }
    if window.cols() != params.spec.input_features {
        return Err(Error::invalid(format!(
            "window has {} features, model expects {}",
            window.cols(),
            params.spec.input_features
        )));
    }
    let (out, cache) = forward(params, window.data(), window.rows())?;
    Ok(([out.get(0, 0), out.get(0, 1), out.get(0, 2)], cache))
}

/// One `steps × features` window through an LSTM model.
pub fn lstm_forward(params: &ModelParams, window: &Matrix) -> Result<([f64; OUTPUT_SIZE], ForwardCache)> {
    single_window(params, ModelFamily::Lstm, window)
}

pub fn gru_forward(params: &ModelParams, window: &Matrix) -> Result<([f64; OUTPUT_SIZE], ForwardCache)> {
    single_window(params, ModelFamily::Gru, window)
}

pub fn cnn_lstm_forward(params: &ModelParams, window: &Matrix) -> Result<([f64; OUTPUT_SIZE], ForwardCache)> {
    single_window(params, ModelFamily::CnnLstm, window)
}

/// GRU hidden-state trajectory from an arbitrary initial state, as
/// `(steps + 1) × hidden` (row 0 is `h0`).
pub fn gru_trajectory(params: &ModelParams, window: &Matrix, h0: &[f64]) -> Result<Matrix> {
    let spec = params.spec;
    if spec.family != ModelFamily::Gru || h0.len() != spec.hidden_size || window.cols() != spec.input_features {
        return Err(Error::invalid("gru_trajectory needs a GRU model, matching window and initial state"));
    }
    check_inputs(&spec, window.data(), window.rows())?;
    let seq = Seq {
        data: window.data(),
        batch: 1,
        steps: window.rows(),
        features: spec.input_features,
    };
    let cache = recurrent::gru_forward(&params.recurrent(), seq, Some(h0));
    Matrix::from_vec(window.rows() + 1, spec.hidden_size, cache.hidden_states().to_vec())
}
