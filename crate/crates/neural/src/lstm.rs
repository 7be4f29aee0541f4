use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{sigmoid, sigmoid_grad, sigmoid_in_place, tanh, tanh_grad, tanh_in_place};
use crate::linalg::{matmul, matmul_at, matmul_bt, matvec_acc};
use crate::{check_len, glorot_bound, NeuralError, ParamSet, Result};

/// One LSTM layer. Gate rows are stacked as input, forget, cell, output,
/// each block `hidden_dim` rows tall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4H × input_dim`, row-major.
    pub w_x: Vec<f64>,
    /// `4H × H`, row-major.
    pub w_h: Vec<f64>,
    /// `4H`.
    pub bias: Vec<f64>,
}

/// Row-compressed input batch for mostly-zero (one-hot) features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    /// `offsets[r]..offsets[r + 1]` indexes the entries of row `r`.
    pub offsets: Vec<usize>,
    pub index: Vec<u32>,
    pub value: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(cols: usize, dense: &[f64]) -> Self {
        let mut out = SparseRows {
            offsets: Vec::with_capacity(dense.len() / cols.max(1) + 1),
            index: Vec::new(),
            value: Vec::new(),
        };
        out.offsets.push(0);
        for row in dense.chunks_exact(cols) {
            for (i, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    out.index.push(i as u32);
                    out.value.push(*v);
                }
            }
            out.offsets.push(out.index.len());
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

/// Time-major layer input: dense `T·B × input_dim`, or the same rows
/// compressed.
#[derive(Debug, Clone, Copy)]
pub(crate) enum LayerInput<'a> {
    Dense(&'a [f64]),
    Sparse(&'a SparseRows),
}

/// Activations kept from a batched forward pass, all time-major. Buffers
/// are reused between calls.
#[derive(Debug, Clone, Default)]
pub(crate) struct LstmCache {
    pub steps: usize,
    pub batch: usize,
    /// Post-activation gates, `T·B × 4H`.
    pub gates: Vec<f64>,
    pub cell: Vec<f64>,
    pub cell_tanh: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Scratch space for `backward_seq`.
#[derive(Debug, Clone, Default)]
pub(crate) struct LstmBackScratch {
    dz_all: Vec<f64>,
    dh_rec: Vec<f64>,
    dc_next: Vec<f64>,
    /// Transposed input-weight gradient for sparse inputs, `I × 4H`.
    dwx_t: Vec<f64>,
    pub dx: Vec<f64>,
}

fn reset(buf: &mut Vec<f64>, len: usize) {
    buf.clear();
    buf.resize(len, 0.0);
}

impl LstmLayer {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_x: vec![0.0; 4 * hidden_dim * input_dim],
            w_h: vec![0.0; 4 * hidden_dim * hidden_dim],
            bias: vec![0.0; 4 * hidden_dim],
        }
    }

    /// Glorot-uniform weights with the forget-gate bias set to one.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input_dim, hidden_dim);
        let bx = glorot_bound(input_dim, hidden_dim);
        let bh = glorot_bound(hidden_dim, hidden_dim);
        for w in &mut layer.w_x {
            *w = rng.gen_range(-bx..bx);
        }
        for w in &mut layer.w_h {
            *w = rng.gen_range(-bh..bh);
        }
        for b in &mut layer.bias[hidden_dim..2 * hidden_dim] {
            *b = 1.0;
        }
        layer
    }

    pub fn validate(&self) -> Result<()> {
        let g = 4 * self.hidden_dim;
        check_len("lstm w_x", g * self.input_dim, self.w_x.len())?;
        check_len("lstm w_h", g * self.hidden_dim, self.w_h.len())?;
        check_len("lstm bias", g, self.bias.len())?;
        if !self.all_finite() {
            return Err(NeuralError::Domain("lstm layer holds non-finite weights".into()));
        }
        Ok(())
    }

    /// Single-sample step: returns `(h', c')`.
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("lstm_step input", self.input_dim, x.len())?;
        check_len("lstm_step hidden", self.hidden_dim, h.len())?;
        check_len("lstm_step cell", self.hidden_dim, c.len())?;
        let mut h_out = h.to_vec();
        let mut c_out = c.to_vec();
        let mut scratch = Vec::new();
        self.step_in_place(x, &mut h_out, &mut c_out, &mut scratch);
        Ok((h_out, c_out))
    }

    /// Advances `(h, c)` in place. `scratch` is resized as needed.
    pub(crate) fn step_in_place(&self, x: &[f64], h: &mut [f64], c: &mut [f64], scratch: &mut Vec<f64>) {
        let hd = self.hidden_dim;
        scratch.clear();
        scratch.extend_from_slice(&self.bias);
        matvec_acc(4 * hd, self.input_dim, &self.w_x, x, scratch);
        matvec_acc(4 * hd, hd, &self.w_h, h, scratch);
        for j in 0..hd {
            let i_g = sigmoid(scratch[j]);
            let f_g = sigmoid(scratch[hd + j]);
            let g_g = tanh(scratch[2 * hd + j]);
            let o_g = sigmoid(scratch[3 * hd + j]);
            c[j] = f_g * c[j] + i_g * g_g;
            h[j] = o_g * tanh(c[j]);
        }
    }

    /// `w_x` transposed to `input_dim × 4H`.
    fn w_x_transposed(&self) -> Vec<f64> {
        let g = 4 * self.hidden_dim;
        let mut t = vec![0.0; g * self.input_dim];
        for r in 0..g {
            for i in 0..self.input_dim {
                t[i * g + r] = self.w_x[r * self.input_dim + i];
            }
        }
        t
    }

    /// Runs `steps` time steps for a batch of sequences starting from zero
    /// state, writing activations into `cache`.
    pub(crate) fn forward_seq(&self, steps: usize, batch: usize, input: LayerInput<'_>, cache: &mut LstmCache) {
        let hd = self.hidden_dim;
        let g = 4 * hd;
        let rows = steps * batch;
        let w_x_t = match input {
            LayerInput::Dense(x) => {
                debug_assert_eq!(x.len(), rows * self.input_dim);
                Vec::new()
            }
            LayerInput::Sparse(s) => {
                debug_assert_eq!(s.rows(), rows);
                self.w_x_transposed()
            }
        };

        cache.steps = steps;
        cache.batch = batch;
        cache.gates.clear();
        cache.gates.reserve(rows * g);
        for _ in 0..rows {
            cache.gates.extend_from_slice(&self.bias);
        }
        reset(&mut cache.cell, rows * hd);
        reset(&mut cache.cell_tanh, rows * hd);
        reset(&mut cache.hidden, rows * hd);
        let zero = vec![0.0; hd];
        // the input projection does not depend on the recurrence, so dense
        // inputs get one large product instead of one per step
        if let LayerInput::Dense(x) = input {
            matmul_bt(rows, self.input_dim, g, x, &self.w_x, 1.0, &mut cache.gates);
        }

        for t in 0..steps {
            let z = &mut cache.gates[t * batch * g..(t + 1) * batch * g];
            match input {
                LayerInput::Dense(_) => {}
                LayerInput::Sparse(s) => {
                    for b in 0..batch {
                        let r = t * batch + b;
                        let zr = &mut z[b * g..(b + 1) * g];
                        for e in s.offsets[r]..s.offsets[r + 1] {
                            let i = s.index[e] as usize;
                            let v = s.value[e];
                            for (zj, wj) in zr.iter_mut().zip(&w_x_t[i * g..(i + 1) * g]) {
                                *zj += v * wj;
                            }
                        }
                    }
                }
            }
            if t > 0 {
                let h_prev = &cache.hidden[(t - 1) * batch * hd..t * batch * hd];
                matmul_bt(batch, hd, g, h_prev, &self.w_h, 1.0, z);
            }
            for b in 0..batch {
                let zr = &mut z[b * g..(b + 1) * g];
                sigmoid_in_place(&mut zr[..2 * hd]);
                tanh_in_place(&mut zr[2 * hd..3 * hd]);
                sigmoid_in_place(&mut zr[3 * hd..]);
                let (i_g, rest) = zr.split_at(hd);
                let (f_g, rest) = rest.split_at(hd);
                let (g_g, o_g) = rest.split_at(hd);

                let base = (t * batch + b) * hd;
                let (done, now) = cache.cell.split_at_mut(base);
                let c_prev = if t > 0 { &done[base - batch * hd..] } else { &zero[..] };
                let c_new = &mut now[..hd];
                for j in 0..hd {
                    c_new[j] = f_g[j] * c_prev[j] + i_g[j] * g_g[j];
                }
                let tc = &mut cache.cell_tanh[base..base + hd];
                tc.copy_from_slice(c_new);
                tanh_in_place(tc);
                let hr = &mut cache.hidden[base..base + hd];
                for j in 0..hd {
                    hr[j] = o_g[j] * tc[j];
                }
            }
        }
    }

    /// Backpropagates `dh_all` (gradient w.r.t. every emitted hidden state)
    /// through the unrolled layer. Accumulates parameter gradients into
    /// `grads`; when `want_input_grad` the input gradient is left in
    /// `scratch.dx`.
    pub(crate) fn backward_seq(
        &self,
        cache: &LstmCache,
        input: LayerInput<'_>,
        dh_all: &[f64],
        grads: &mut LstmLayer,
        want_input_grad: bool,
        scratch: &mut LstmBackScratch,
    ) {
        let hd = self.hidden_dim;
        let g = 4 * hd;
        let (steps, batch) = (cache.steps, cache.batch);
        let rows = steps * batch;

        reset(&mut scratch.dz_all, rows * g);
        reset(&mut scratch.dh_rec, batch * hd);
        reset(&mut scratch.dc_next, batch * hd);
        let zero = vec![0.0; hd];
        let dz_all = &mut scratch.dz_all;
        let dh_rec = &mut scratch.dh_rec;
        let dc_next = &mut scratch.dc_next;

        for t in (0..steps).rev() {
            for b in 0..batch {
                let r = t * batch + b;
                let gr = &cache.gates[r * g..(r + 1) * g];
                let (i_g, rest) = gr.split_at(hd);
                let (f_g, rest) = rest.split_at(hd);
                let (g_g, o_g) = rest.split_at(hd);
                let tc = &cache.cell_tanh[r * hd..(r + 1) * hd];
                let c_prev = if t > 0 { &cache.cell[(r - batch) * hd..(r - batch + 1) * hd] } else { &zero[..] };
                let dh_out = &dh_all[r * hd..(r + 1) * hd];
                let dh_r = &dh_rec[b * hd..(b + 1) * hd];
                let dc_n = &mut dc_next[b * hd..(b + 1) * hd];

                let dz = &mut dz_all[r * g..(r + 1) * g];
                let (dz_i, rest) = dz.split_at_mut(hd);
                let (dz_f, rest) = rest.split_at_mut(hd);
                let (dz_g, dz_o) = rest.split_at_mut(hd);
                for j in 0..hd {
                    let dh = dh_out[j] + dh_r[j];
                    let dc = dh * o_g[j] * tanh_grad(tc[j]) + dc_n[j];
                    dz_i[j] = dc * g_g[j] * sigmoid_grad(i_g[j]);
                    dz_f[j] = dc * c_prev[j] * sigmoid_grad(f_g[j]);
                    dz_g[j] = dc * i_g[j] * tanh_grad(g_g[j]);
                    dz_o[j] = dh * tc[j] * sigmoid_grad(o_g[j]);
                    dc_n[j] = dc * f_g[j];
                }
            }
            if t > 0 {
                let dz_t = &dz_all[t * batch * g..(t + 1) * batch * g];
                matmul(batch, g, hd, dz_t, &self.w_h, 0.0, dh_rec);
            }
        }

        match input {
            LayerInput::Dense(x) => {
                matmul_at(g, rows, self.input_dim, dz_all, x, 1.0, &mut grads.w_x);
            }
            LayerInput::Sparse(s) => {
                reset(&mut scratch.dwx_t, self.input_dim * g);
                for r in 0..rows {
                    let dz = &dz_all[r * g..(r + 1) * g];
                    for e in s.offsets[r]..s.offsets[r + 1] {
                        let i = s.index[e] as usize;
                        let v = s.value[e];
                        for (acc, d) in scratch.dwx_t[i * g..(i + 1) * g].iter_mut().zip(dz) {
                            *acc += v * d;
                        }
                    }
                }
                for r in 0..g {
                    for i in 0..self.input_dim {
                        grads.w_x[r * self.input_dim + i] += scratch.dwx_t[i * g + r];
                    }
                }
            }
        }
        if steps > 1 {
            matmul_at(
                g,
                (steps - 1) * batch,
                hd,
                &dz_all[batch * g..],
                &cache.hidden[..(steps - 1) * batch * hd],
                1.0,
                &mut grads.w_h,
            );
        }
        for row in dz_all.chunks_exact(g) {
            for (acc, v) in grads.bias.iter_mut().zip(row) {
                *acc += v;
            }
        }

        if want_input_grad {
            reset(&mut scratch.dx, rows * self.input_dim);
            matmul(rows, g, self.input_dim, dz_all, &self.w_x, 0.0, &mut scratch.dx);
        }
    }
}

impl ParamSet for LstmLayer {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.w_x, &self.w_h, &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }
}
