//! Dense and LSTM layers over a flat parameter vector.
//!
//! Matrices are row-major `(out, in)`. Activations are 2-D row blocks
//! (`rows × features`); LSTMs see a 3-D `(sequences, length, features)` block.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2, Axis};
use rand::Rng;

pub(crate) const LEAKY_SLOPE: f64 = 0.01;
/// Initial total forget-gate bias.
pub(crate) const FORGET_BIAS: f64 = 1.0;

fn mat(params: &[f64], off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &params[off..off + rows * cols]).expect("layout")
}

fn mat_mut(params: &mut [f64], off: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut params[off..off + rows * cols]).expect("layout")
}

/// `y = x Wᵀ + b`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl Linear {
    pub fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.outputs * self.inputs
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng, zero_bias: bool) {
        let bound = 1.0 / (self.inputs as f64).sqrt();
        for p in &mut params[self.offset..self.offset + self.len()] {
            *p = rng.random_range(-bound..bound);
        }
        if zero_bias {
            params[self.bias_offset()..self.bias_offset() + self.outputs].fill(0.0);
        }
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let w = mat(params, self.offset, self.outputs, self.inputs);
        let b = &params[self.bias_offset()..self.bias_offset() + self.outputs];
        let mut y = Array2::from_shape_fn((x.nrows(), self.outputs), |(_, j)| b[j]);
        general_mat_mul(1.0, &x, &w.t(), 1.0, &mut y);
        y
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        {
            let mut dw = mat_mut(grads, self.offset, self.outputs, self.inputs);
            general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut dw);
        }
        let db = &mut grads[self.bias_offset()..self.bias_offset() + self.outputs];
        for row in dy.rows() {
            for (g, v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let w = mat(params, self.offset, self.outputs, self.inputs);
        dy.dot(&w)
    }
}

pub(crate) fn leaky_relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub(crate) fn leaky_relu_backward(pre: &Array2<f64>, dy: &mut Array2<f64>) {
    dy.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
}

/// Single-layer unidirectional LSTM with gate order (input, forget, cell,
/// output) and separate input and recurrent biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Lstm {
    pub inputs: usize,
    pub hidden: usize,
    pub offset: usize,
}

/// Forward activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub(crate) struct LstmTape {
    /// Gate activations `(S, L, 4h)`: sigmoid for i, f, o and tanh for g.
    gates: Array3<f64>,
    /// Cell states `(S, L, h)` and their tanh.
    cells: Array3<f64>,
    tanh_cells: Array3<f64>,
    /// Hidden states `(S, L, h)`, also the layer output.
    hidden: Array3<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `tanh` through one `exp`; about three times faster than `f64::tanh` here.
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

impl Lstm {
    pub fn len(&self) -> usize {
        4 * self.hidden * (self.inputs + self.hidden + 2)
    }

    fn w_ih(&self) -> usize {
        self.offset
    }

    fn w_hh(&self) -> usize {
        self.w_ih() + 4 * self.hidden * self.inputs
    }

    fn b_ih(&self) -> usize {
        self.w_hh() + 4 * self.hidden * self.hidden
    }

    fn b_hh(&self) -> usize {
        self.b_ih() + 4 * self.hidden
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        for p in &mut params[self.offset..self.offset + self.len()] {
            *p = rng.random_range(-bound..bound);
        }
        // Forget gate starts half-open so early gradients survive long sequences.
        let h = self.hidden;
        params[self.b_ih() + h..self.b_ih() + 2 * h].fill(FORGET_BIAS);
        params[self.b_hh() + h..self.b_hh() + 2 * h].fill(0.0);
    }

    /// Runs every sequence of `x` `(S, L, in)` from a zero state.
    pub fn forward(&self, params: &[f64], x: ArrayView3<f64>) -> LstmTape {
        let (seqs, len, inputs) = x.dim();
        debug_assert_eq!(inputs, self.inputs);
        let h = self.hidden;
        let g4 = 4 * h;
        let w_ih = mat(params, self.w_ih(), g4, self.inputs);
        // `W_hhᵀ` rows let the recurrent term run as contiguous axpys.
        let w_hh_t: Vec<f64> = mat(params, self.w_hh(), g4, h).t().iter().copied().collect();
        let bias: Vec<f64> = (0..g4)
            .map(|k| params[self.b_ih() + k] + params[self.b_hh() + k])
            .collect();

        // Input projection for all steps in one product; the recurrent term
        // and the activations are then applied in place.
        let x2 = x.to_shape((seqs * len, inputs)).expect("contiguous");
        let mut proj = Array2::from_shape_fn((seqs * len, g4), |(_, k)| bias[k]);
        general_mat_mul(1.0, &x2, &w_ih.t(), 1.0, &mut proj);
        let mut gates = proj.into_shape_with_order((seqs, len, g4)).expect("shape");
        let mut cells = Array3::zeros((seqs, len, h));
        let mut hidden = Array3::zeros((seqs, len, h));
        let mut tanh_cells = Array3::zeros((seqs, len, h));
        let gs = gates.as_slice_mut().expect("standard");
        let cs = cells.as_slice_mut().expect("standard");
        let hs = hidden.as_slice_mut().expect("standard");
        let ts = tanh_cells.as_slice_mut().expect("standard");
        for sq in 0..seqs {
            for l in 0..len {
                let base = sq * len + l;
                let z = &mut gs[base * g4..(base + 1) * g4];
                if l > 0 {
                    let hp = &hs[(base - 1) * h..base * h];
                    for (k, &hk) in hp.iter().enumerate() {
                        for (zr, &w) in z.iter_mut().zip(&w_hh_t[k * g4..(k + 1) * g4]) {
                            *zr += w * hk;
                        }
                    }
                }
                for k in 0..h {
                    let i = sigmoid(z[k]);
                    let f = sigmoid(z[h + k]);
                    let g = tanh(z[2 * h + k]);
                    let o = sigmoid(z[3 * h + k]);
                    let c_prev = if l > 0 { cs[(base - 1) * h + k] } else { 0.0 };
                    let c = f * c_prev + i * g;
                    let tc = tanh(c);
                    z[k] = i;
                    z[h + k] = f;
                    z[2 * h + k] = g;
                    z[3 * h + k] = o;
                    cs[base * h + k] = c;
                    ts[base * h + k] = tc;
                    hs[base * h + k] = o * tc;
                }
            }
        }
        LstmTape { gates, cells, tanh_cells, hidden }
    }

    /// Backpropagation through time; returns `∂L/∂x` `(S, L, in)`.
    pub fn backward(
        &self,
        params: &[f64],
        grads: &mut [f64],
        x: ArrayView3<f64>,
        tape: &LstmTape,
        dh_out: ArrayView3<f64>,
    ) -> Array3<f64> {
        let (seqs, len, inputs) = x.dim();
        let h = self.hidden;
        let g4 = 4 * h;
        let w_hh = &params[self.w_hh()..self.w_hh() + g4 * h];
        let dh_out = dh_out.as_standard_layout();
        let dho = dh_out.as_slice().expect("standard");
        let gs = tape.gates.as_slice().expect("standard");
        let cs = tape.cells.as_slice().expect("standard");
        let ts = tape.tanh_cells.as_slice().expect("standard");
        let mut dz_all = Array3::<f64>::zeros((seqs, len, g4));
        let dzs = dz_all.as_slice_mut().expect("standard");
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for sq in 0..seqs {
            dh_next.fill(0.0);
            dc_next.fill(0.0);
            for l in (0..len).rev() {
                let base = sq * len + l;
                let gate = &gs[base * g4..(base + 1) * g4];
                let dz = &mut dzs[base * g4..(base + 1) * g4];
                for k in 0..h {
                    let (i, f, g, o) = (gate[k], gate[h + k], gate[2 * h + k], gate[3 * h + k]);
                    let c_prev = if l > 0 { cs[(base - 1) * h + k] } else { 0.0 };
                    let tc = ts[base * h + k];
                    let dh = dho[base * h + k] + dh_next[k];
                    let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                    dz[k] = dc * g * i * (1.0 - i);
                    dz[h + k] = dc * c_prev * f * (1.0 - f);
                    dz[2 * h + k] = dc * i * (1.0 - g * g);
                    dz[3 * h + k] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
                dh_next.fill(0.0);
                if l > 0 {
                    for (r, &d) in dz.iter().enumerate() {
                        let w = &w_hh[r * h..(r + 1) * h];
                        for (acc, &wv) in dh_next.iter_mut().zip(w) {
                            *acc += d * wv;
                        }
                    }
                }
            }
        }

        let dz2 = dz_all.to_shape((seqs * len, g4)).expect("contiguous");
        let x2 = x.to_shape((seqs * len, inputs)).expect("contiguous");
        {
            let mut dw = mat_mut(grads, self.w_ih(), g4, inputs);
            general_mat_mul(1.0, &dz2.t(), &x2, 1.0, &mut dw);
        }
        if len > 1 {
            // Recurrent weights see the previous hidden state of each step.
            let dz_tail = dz_all.slice(s![.., 1.., ..]);
            let h_head = tape.hidden.slice(s![.., ..len - 1, ..]);
            let dz_tail = dz_tail.to_shape((seqs * (len - 1), g4)).expect("shape");
            let h_head = h_head.to_shape((seqs * (len - 1), h)).expect("shape");
            let mut dw = mat_mut(grads, self.w_hh(), g4, h);
            general_mat_mul(1.0, &dz_tail.t(), &h_head, 1.0, &mut dw);
        }
        let colsum = dz2.sum_axis(Axis(0));
        for k in 0..g4 {
            grads[self.b_ih() + k] += colsum[k];
            grads[self.b_hh() + k] += colsum[k];
        }
        let w_ih = mat(params, self.w_ih(), g4, inputs);
        dz2.dot(&w_ih).into_shape_with_order((seqs, len, inputs)).expect("shape")
    }
}

impl LstmTape {
    pub fn output(&self) -> &Array3<f64> {
        &self.hidden
    }

    pub fn into_output(self) -> Array3<f64> {
        self.hidden
    }
}
