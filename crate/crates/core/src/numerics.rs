//! Dense kernels shared by every forecaster: matrices, GEMM on strided views,
//! activations, dense and 1-D convolution layers with hand-written backward
//! passes, and a central-difference gradient checker.
//!
//! Everything is `f64`. Batched data is stored row-major, one sample per row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn view(&self) -> MatRef<'_> {
        MatRef::row_major(&self.data, self.rows, self.cols)
    }

    pub fn view_mut(&mut self) -> MatMut<'_> {
        let (rows, cols) = (self.rows, self.cols);
        MatMut::row_major(&mut self.data, rows, cols)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) * rs + (cols - 1) * cs;
        assert!(
            last < len,
            "strided view {rows}x{cols} (rs {rs}, cs {cs}) exceeds buffer of {len}"
        );
    }
}

/// Read-only strided matrix view. Rows may overlap (im2col-style views).
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    /// Panics if the view reaches outside `data`.
    pub fn new(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        check_extent(data.len(), rows, cols, rs, cs);
        MatRef {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef::new(data, rows, cols, cols, 1)
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.rs + c * self.cs]
    }
}

/// Mutable strided view. Rows must not overlap.
#[derive(Debug)]
pub struct MatMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        check_extent(data.len(), rows, cols, rs, cs);
        assert!(
            rows <= 1 || cols <= 1 || rs >= cols * cs || cs >= rows * rs,
            "mutable view rows overlap"
        );
        MatMut {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn row_major(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        MatMut::new(data, rows, cols, cols, 1)
    }
}

/// `c ← alpha·a·b + beta·c`. Panics on inconsistent shapes.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape mismatch");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for col in 0..n {
                c.data[r * c.rs + col * c.cs] *= beta;
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked at construction for its full
    // strided extent, and `c` is a unique borrow with non-overlapping rows, so
    // it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::invalid(format!(
            "matmul dimension mismatch: {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a.view(), b.view(), 0.0, out.view_mut());
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn activation(x: &Matrix, kind: Activation) -> Matrix {
    x.map(|v| kind.apply(v))
}

/// Backward of an elementwise activation, given its forward output.
pub fn activation_backward(output: &Matrix, upstream: &Matrix, kind: Activation) -> Result<Matrix> {
    if output.shape() != upstream.shape() {
        return Err(Error::invalid(format!(
            "activation backward shape mismatch: {:?} vs {:?}",
            output.shape(),
            upstream.shape()
        )));
    }
    let data = output
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&y, &g)| g * kind.derivative_from_output(y))
        .collect();
    Ok(Matrix {
        rows: output.rows,
        cols: output.cols,
        data,
    })
}

/// Adds `bias` to every row of a row-major `rows x bias.len()` buffer.
pub(crate) fn add_row_bias(out: &mut [f64], bias: &[f64]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Accumulates the column sums of a strided block into `acc`.
pub(crate) fn accumulate_col_sums(acc: &mut [f64], m: MatRef<'_>) {
    debug_assert_eq!(acc.len(), m.cols);
    for r in 0..m.rows {
        for (c, a) in acc.iter_mut().enumerate() {
            *a += m.get(r, c);
        }
    }
}

/// Gradients of a dense layer `y = x·W + b` (x: B×I, W: I×O).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

pub fn dense_forward(x: &Matrix, weight: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if bias.len() != weight.cols {
        return Err(Error::invalid("dense bias length does not match output width"));
    }
    let mut y = matmul(x, weight)?;
    add_row_bias(&mut y.data, bias);
    Ok(y)
}

pub fn dense_backward(x: &Matrix, weight: &Matrix, upstream: &Matrix) -> Result<DenseGrads> {
    if x.cols != weight.rows || upstream.rows != x.rows || upstream.cols != weight.cols {
        return Err(Error::invalid(format!(
            "dense backward shape mismatch: x {:?}, W {:?}, upstream {:?}",
            x.shape(),
            weight.shape(),
            upstream.shape()
        )));
    }
    let mut input = Matrix::zeros(x.rows, x.cols);
    gemm(1.0, upstream.view(), weight.view().t(), 0.0, input.view_mut());
    let mut w = Matrix::zeros(weight.rows, weight.cols);
    gemm(1.0, x.view().t(), upstream.view(), 0.0, w.view_mut());
    let mut bias = vec![0.0; weight.cols];
    accumulate_col_sums(&mut bias, upstream.view());
    Ok(DenseGrads {
        input,
        weight: w,
        bias,
    })
}

/// Convolution kernels stored `[k][c_in][c_out]`, i.e. a `(K·C_in) × C_out`
/// row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dKernels {
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub data: Vec<f64>,
}

impl Conv1dKernels {
    pub fn new(width: usize, in_channels: usize, out_channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || data.len() != width * in_channels * out_channels {
            return Err(Error::invalid(format!(
                "kernel data has {} entries, expected {width}x{in_channels}x{out_channels}",
                data.len()
            )));
        }
        Ok(Conv1dKernels {
            width,
            in_channels,
            out_channels,
            data,
        })
    }

    pub fn get(&self, k: usize, c: usize, o: usize) -> f64 {
        self.data[(k * self.in_channels + c) * self.out_channels + o]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dGrads {
    pub input: Matrix,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Copies the sliding patches of a batch of `steps x channels` sequences into
/// a `(batch·out_steps) × (width·channels)` buffer. A patch of a row-major
/// sequence is contiguous, so each row is a straight copy.
pub(crate) fn im2col(seqs: &[f64], batch: usize, steps: usize, channels: usize, width: usize) -> Vec<f64> {
    let out_steps = steps + 1 - width;
    let patch = width * channels;
    let mut cols = Vec::with_capacity(batch * out_steps * patch);
    for s in 0..batch {
        let seq = &seqs[s * steps * channels..(s + 1) * steps * channels];
        for t in 0..out_steps {
            cols.extend_from_slice(&seq[t * channels..t * channels + patch]);
        }
    }
    cols
}

/// Scatters patch gradients back onto the sequences they were copied from.
pub(crate) fn col2im(
    cols: &[f64],
    batch: usize,
    steps: usize,
    channels: usize,
    width: usize,
) -> Vec<f64> {
    let out_steps = steps + 1 - width;
    let patch = width * channels;
    let mut seqs = vec![0.0; batch * steps * channels];
    for s in 0..batch {
        let seq = &mut seqs[s * steps * channels..(s + 1) * steps * channels];
        for t in 0..out_steps {
            let row = &cols[(s * out_steps + t) * patch..(s * out_steps + t + 1) * patch];
            for (d, g) in seq[t * channels..t * channels + patch].iter_mut().zip(row) {
                *d += g;
            }
        }
    }
    seqs
}

fn check_conv(input: &Matrix, kernels: &Conv1dKernels) -> Result<()> {
    if input.cols != kernels.in_channels {
        return Err(Error::invalid(format!(
            "conv input has {} channels, kernels expect {}",
            input.cols, kernels.in_channels
        )));
    }
    if input.rows < kernels.width {
        return Err(Error::invalid(format!(
            "conv input length {} shorter than kernel width {}",
            input.rows, kernels.width
        )));
    }
    Ok(())
}

/// Valid, stride-1 convolution of a `T × C_in` sequence; output is
/// `(T − K + 1) × C_out`.
pub fn conv1d_forward(input: &Matrix, kernels: &Conv1dKernels, bias: &[f64]) -> Result<Matrix> {
    check_conv(input, kernels)?;
    if bias.len() != kernels.out_channels {
        return Err(Error::invalid("conv bias length does not match output channels"));
    }
    let out_steps = input.rows + 1 - kernels.width;
    let patch = kernels.width * kernels.in_channels;
    let cols = im2col(&input.data, 1, input.rows, input.cols, kernels.width);
    let mut out = Matrix::zeros(out_steps, kernels.out_channels);
    gemm(
        1.0,
        MatRef::row_major(&cols, out_steps, patch),
        MatRef::row_major(&kernels.data, patch, kernels.out_channels),
        0.0,
        out.view_mut(),
    );
    add_row_bias(&mut out.data, bias);
    Ok(out)
}

pub fn conv1d_backward(input: &Matrix, kernels: &Conv1dKernels, upstream: &Matrix) -> Result<Conv1dGrads> {
    check_conv(input, kernels)?;
    let out_steps = input.rows + 1 - kernels.width;
    if upstream.shape() != (out_steps, kernels.out_channels) {
        return Err(Error::invalid(format!(
            "conv upstream shape {:?}, expected ({out_steps}, {})",
            upstream.shape(),
            kernels.out_channels
        )));
    }
    let patch = kernels.width * kernels.in_channels;
    let cols = im2col(&input.data, 1, input.rows, input.cols, kernels.width);
    let mut dk = vec![0.0; patch * kernels.out_channels];
    gemm(
        1.0,
        MatRef::row_major(&cols, out_steps, patch).t(),
        upstream.view(),
        0.0,
        MatMut::row_major(&mut dk, patch, kernels.out_channels),
    );
    let mut dcols = vec![0.0; out_steps * patch];
    gemm(
        1.0,
        upstream.view(),
        MatRef::row_major(&kernels.data, patch, kernels.out_channels).t(),
        0.0,
        MatMut::row_major(&mut dcols, out_steps, patch),
    );
    let dinput = col2im(&dcols, 1, input.rows, input.cols, kernels.width);
    let mut bias = vec![0.0; kernels.out_channels];
    accumulate_col_sums(&mut bias, upstream.view());
    Ok(Conv1dGrads {
        input: Matrix::from_vec(input.rows, input.cols, dinput)?,
        kernels: dk,
        bias,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter_index: usize,
    pub checked: usize,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` on every coordinate.
pub fn gradient_check<F>(f: F, analytic: &[f64], params: &[f64], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    let all: Vec<usize> = (0..params.len()).collect();
    gradient_check_indices(f, analytic, params, &all, cfg)
}

/// As [`gradient_check`], restricted to the listed coordinates.
pub fn gradient_check_indices<F>(
    mut f: F,
    analytic: &[f64],
    params: &[f64],
    indices: &[usize],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if cfg.eps.is_nan() || cfg.eps <= 0.0 {
        return Err(Error::config("gradient check eps must be positive"));
    }
    if analytic.len() != params.len() {
        return Err(Error::invalid(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut p = params.to_vec();
    let mut worst = (0.0_f64, 0_usize);
    for &i in indices {
        if i >= p.len() {
            return Err(Error::invalid(format!("parameter index {i} out of range")));
        }
        let orig = p[i];
        p[i] = orig + cfg.eps;
        let plus = f(&p);
        p[i] = orig - cfg.eps;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective evaluated to {plus} / {minus} around parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_parameter_index: worst.1,
        checked: indices.len(),
        passed: worst.0 < cfg.tol,
    })
}
