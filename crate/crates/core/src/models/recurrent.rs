//! Batched LSTM and GRU layers over `batch × steps × features` sequences,
//! with backpropagation through time.
//!
//! Weights are stored input-major: `w` is `features × (G·H)`, `u` is
//! `H × (G·H)` and `b` has `G·H` entries, with gate blocks laid out side by
//! side (LSTM: input, forget, cell, output; GRU: update, reset, candidate).

use crate::numerics::{accumulate_col_sums, gemm, sigmoid, MatMut, MatRef};

/// Row-major `batch × steps × features` input sequence.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Seq<'a> {
    pub data: &'a [f64],
    pub batch: usize,
    pub steps: usize,
    pub features: usize,
}

impl<'a> Seq<'a> {
    /// The `batch × features` slice of step `t`.
    fn step(&self, t: usize) -> MatRef<'a> {
        let row = self.steps * self.features;
        MatRef::new(&self.data[t * self.features..], self.batch, self.features, row, 1)
    }
}

fn step_mut(dx: &mut [f64], t: usize, batch: usize, steps: usize, features: usize) -> MatMut<'_> {
    MatMut::new(&mut dx[t * features..], batch, features, steps * features, 1)
}

/// Column block `[start, start + width)` of a row-major matrix with `cols` columns.
fn block(data: &[f64], rows: usize, cols: usize, start: usize, width: usize) -> MatRef<'_> {
    MatRef::new(&data[start..], rows, width, cols, 1)
}

fn block_mut(data: &mut [f64], rows: usize, cols: usize, start: usize, width: usize) -> MatMut<'_> {
    MatMut::new(&mut data[start..], rows, width, cols, 1)
}

pub(crate) struct RecurrentWeights<'a> {
    pub w: &'a [f64],
    pub u: &'a [f64],
    pub b: &'a [f64],
    pub hidden: usize,
    pub features: usize,
}

pub(crate) struct RecurrentGrads<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    batch: usize,
    steps: usize,
    hidden: usize,
    /// Activated gates per step, `steps × batch × 4H`.
    gates: Vec<f64>,
    /// Cell states, `(steps + 1) × batch × H`; slot 0 is the zero state.
    cells: Vec<f64>,
    /// Hidden states, same layout as `cells`.
    hiddens: Vec<f64>,
    /// `tanh` of each new cell state, `steps × batch × H`.
    cell_tanh: Vec<f64>,
}

impl LstmCache {
    pub fn final_hidden(&self) -> &[f64] {
        let bh = self.batch * self.hidden;
        &self.hiddens[self.steps * bh..]
    }

    pub fn hidden_states(&self) -> &[f64] {
        &self.hiddens
    }
}

pub(crate) fn lstm_forward(p: &RecurrentWeights<'_>, x: Seq<'_>) -> LstmCache {
    let (bsz, steps, h) = (x.batch, x.steps, p.hidden);
    let g4 = 4 * h;
    let bh = bsz * h;
    let mut gates = vec![0.0; steps * bsz * g4];
    let mut cells = vec![0.0; (steps + 1) * bh];
    let mut hiddens = vec![0.0; (steps + 1) * bh];
    let mut cell_tanh = vec![0.0; steps * bh];
    let w = MatRef::row_major(p.w, p.features, g4);
    let u = MatRef::row_major(p.u, h, g4);

    for t in 0..steps {
        let z = &mut gates[t * bsz * g4..(t + 1) * bsz * g4];
        for row in z.chunks_exact_mut(g4) {
            row.copy_from_slice(p.b);
        }
        gemm(1.0, x.step(t), w, 1.0, MatMut::row_major(z, bsz, g4));
        let (past, future) = hiddens.split_at_mut((t + 1) * bh);
        let h_prev = &past[t * bh..];
        gemm(1.0, MatRef::row_major(h_prev, bsz, h), u, 1.0, MatMut::row_major(z, bsz, g4));

        let (c_past, c_future) = cells.split_at_mut((t + 1) * bh);
        let c_prev = &c_past[t * bh..];
        let c_new = &mut c_future[..bh];
        let h_new = &mut future[..bh];
        let tc_new = &mut cell_tanh[t * bh..(t + 1) * bh];
        for s in 0..bsz {
            let zr = &mut z[s * g4..(s + 1) * g4];
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let g = zr[2 * h + j].tanh();
                let o = sigmoid(zr[3 * h + j]);
                zr[j] = i;
                zr[h + j] = f;
                zr[2 * h + j] = g;
                zr[3 * h + j] = o;
                let k = s * h + j;
                let c = f * c_prev[k] + i * g;
                let tc = c.tanh();
                c_new[k] = c;
                tc_new[k] = tc;
                h_new[k] = o * tc;
            }
        }
    }
    LstmCache {
        batch: bsz,
        steps,
        hidden: h,
        gates,
        cells,
        hiddens,
        cell_tanh,
    }
}

/// Accumulates parameter gradients into `grads` given `dh_final`, the
/// gradient w.r.t. the last hidden state. Writes input gradients into `dx`
/// when provided.
pub(crate) fn lstm_backward(
    p: &RecurrentWeights<'_>,
    x: Seq<'_>,
    cache: &LstmCache,
    dh_final: &[f64],
    grads: RecurrentGrads<'_>,
    mut dx: Option<&mut [f64]>,
) {
    let (bsz, steps, h) = (cache.batch, cache.steps, cache.hidden);
    let g4 = 4 * h;
    let bh = bsz * h;
    let w = MatRef::row_major(p.w, p.features, g4);
    let u = MatRef::row_major(p.u, h, g4);
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; bh];
    let mut dz = vec![0.0; bsz * g4];

    for t in (0..steps).rev() {
        let gates = &cache.gates[t * bsz * g4..(t + 1) * bsz * g4];
        let c_prev = &cache.cells[t * bh..(t + 1) * bh];
        let tc = &cache.cell_tanh[t * bh..(t + 1) * bh];
        for s in 0..bsz {
            let gr = &gates[s * g4..(s + 1) * g4];
            let dzr = &mut dz[s * g4..(s + 1) * g4];
            for j in 0..h {
                let k = s * h + j;
                let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let d_o = dh[k] * tc[k];
                let dct = dc[k] + dh[k] * o * (1.0 - tc[k] * tc[k]);
                dzr[j] = dct * g * i * (1.0 - i);
                dzr[h + j] = dct * c_prev[k] * f * (1.0 - f);
                dzr[2 * h + j] = dct * i * (1.0 - g * g);
                dzr[3 * h + j] = d_o * o * (1.0 - o);
                dc[k] = dct * f;
            }
        }
        let dzm = MatRef::row_major(&dz, bsz, g4);
        gemm(1.0, x.step(t).t(), dzm, 1.0, MatMut::row_major(grads.w, p.features, g4));
        let h_prev = MatRef::row_major(&cache.hiddens[t * bh..(t + 1) * bh], bsz, h);
        gemm(1.0, h_prev.t(), dzm, 1.0, MatMut::row_major(grads.u, h, g4));
        accumulate_col_sums(grads.b, dzm);
        gemm(1.0, dzm, u.t(), 0.0, MatMut::row_major(&mut dh, bsz, h));
        if let Some(dx) = dx.as_deref_mut() {
            gemm(1.0, dzm, w.t(), 0.0, step_mut(dx, t, bsz, steps, p.features));
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    batch: usize,
    steps: usize,
    hidden: usize,
    /// Activated gates per step, `steps × batch × 3H` (update, reset, candidate).
    gates: Vec<f64>,
    /// Hidden states, `(steps + 1) × batch × H`; slot 0 is the zero state.
    hiddens: Vec<f64>,
    /// Reset-gated previous hidden state `r ⊙ h`, `steps × batch × H`.
    reset_hidden: Vec<f64>,
}

impl GruCache {
    pub fn final_hidden(&self) -> &[f64] {
        let bh = self.batch * self.hidden;
        &self.hiddens[self.steps * bh..]
    }

    pub fn hidden_states(&self) -> &[f64] {
        &self.hiddens
    }
}

pub(crate) fn gru_forward(p: &RecurrentWeights<'_>, x: Seq<'_>, h0: Option<&[f64]>) -> GruCache {
    let (bsz, steps, h) = (x.batch, x.steps, p.hidden);
    let g3 = 3 * h;
    let bh = bsz * h;
    let mut gates = vec![0.0; steps * bsz * g3];
    let mut hiddens = vec![0.0; (steps + 1) * bh];
    if let Some(h0) = h0 {
        hiddens[..bh].copy_from_slice(h0);
    }
    let mut reset_hidden = vec![0.0; steps * bh];
    let w = MatRef::row_major(p.w, p.features, g3);

    for t in 0..steps {
        let a = &mut gates[t * bsz * g3..(t + 1) * bsz * g3];
        for row in a.chunks_exact_mut(g3) {
            row.copy_from_slice(p.b);
        }
        gemm(1.0, x.step(t), w, 1.0, MatMut::row_major(a, bsz, g3));
        let (past, future) = hiddens.split_at_mut((t + 1) * bh);
        let h_prev = &past[t * bh..];
        gemm(
            1.0,
            MatRef::row_major(h_prev, bsz, h),
            block(p.u, h, g3, 0, 2 * h),
            1.0,
            block_mut(a, bsz, g3, 0, 2 * h),
        );
        let rh = &mut reset_hidden[t * bh..(t + 1) * bh];
        for s in 0..bsz {
            for j in 0..h {
                let z = sigmoid(a[s * g3 + j]);
                let r = sigmoid(a[s * g3 + h + j]);
                a[s * g3 + j] = z;
                a[s * g3 + h + j] = r;
                rh[s * h + j] = r * h_prev[s * h + j];
            }
        }
        gemm(
            1.0,
            MatRef::row_major(rh, bsz, h),
            block(p.u, h, g3, 2 * h, h),
            1.0,
            block_mut(a, bsz, g3, 2 * h, h),
        );
        let h_new = &mut future[..bh];
        for s in 0..bsz {
            for j in 0..h {
                let n = a[s * g3 + 2 * h + j].tanh();
                a[s * g3 + 2 * h + j] = n;
                let z = a[s * g3 + j];
                let k = s * h + j;
                h_new[k] = (1.0 - z) * h_prev[k] + z * n;
            }
        }
    }
    GruCache {
        batch: bsz,
        steps,
        hidden: h,
        gates,
        hiddens,
        reset_hidden,
    }
}

pub(crate) fn gru_backward(
    p: &RecurrentWeights<'_>,
    x: Seq<'_>,
    cache: &GruCache,
    dh_final: &[f64],
    grads: RecurrentGrads<'_>,
    mut dx: Option<&mut [f64]>,
) {
    let (bsz, steps, h) = (cache.batch, cache.steps, cache.hidden);
    let g3 = 3 * h;
    let bh = bsz * h;
    let w = MatRef::row_major(p.w, p.features, g3);
    let mut dh = dh_final.to_vec();
    let mut dh_prev = vec![0.0; bh];
    let mut da = vec![0.0; bsz * g3];
    let mut d_rh = vec![0.0; bh];

    for t in (0..steps).rev() {
        let gates = &cache.gates[t * bsz * g3..(t + 1) * bsz * g3];
        let h_prev = &cache.hiddens[t * bh..(t + 1) * bh];
        for s in 0..bsz {
            for j in 0..h {
                let k = s * h + j;
                let (z, n) = (gates[s * g3 + j], gates[s * g3 + 2 * h + j]);
                da[s * g3 + j] = dh[k] * (n - h_prev[k]) * z * (1.0 - z);
                da[s * g3 + 2 * h + j] = dh[k] * z * (1.0 - n * n);
                dh_prev[k] = dh[k] * (1.0 - z);
            }
        }
        // candidate path through the reset-gated recurrent product
        gemm(
            1.0,
            block(&da, bsz, g3, 2 * h, h),
            block(p.u, h, g3, 2 * h, h).t(),
            0.0,
            MatMut::row_major(&mut d_rh, bsz, h),
        );
        let rh = MatRef::row_major(&cache.reset_hidden[t * bh..(t + 1) * bh], bsz, h);
        gemm(1.0, rh.t(), block(&da, bsz, g3, 2 * h, h), 1.0, block_mut(grads.u, h, g3, 2 * h, h));
        for s in 0..bsz {
            for j in 0..h {
                let k = s * h + j;
                let r = gates[s * g3 + h + j];
                da[s * g3 + h + j] = d_rh[k] * h_prev[k] * r * (1.0 - r);
                dh_prev[k] += d_rh[k] * r;
            }
        }
        let hp = MatRef::row_major(h_prev, bsz, h);
        let dzr = block(&da, bsz, g3, 0, 2 * h);
        gemm(1.0, hp.t(), dzr, 1.0, block_mut(grads.u, h, g3, 0, 2 * h));
        gemm(
            1.0,
            dzr,
            block(p.u, h, g3, 0, 2 * h).t(),
            1.0,
            MatMut::row_major(&mut dh_prev, bsz, h),
        );
        let dam = MatRef::row_major(&da, bsz, g3);
        gemm(1.0, x.step(t).t(), dam, 1.0, MatMut::row_major(grads.w, p.features, g3));
        accumulate_col_sums(grads.b, dam);
        if let Some(dx) = dx.as_deref_mut() {
            gemm(1.0, dam, w.t(), 0.0, step_mut(dx, t, bsz, steps, p.features));
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}
