//! Layers, parameter storage and the Adam optimizer used by the model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, Graph, Matrix, Var};

/// Named trainable tensors. Ids are positions in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn get(&self, id: usize) -> &Matrix {
        &self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn var(&self, g: &mut Graph, id: usize) -> Var {
        g.param(id, &self.values[id])
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Affine map `x w + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, inp: usize, out: usize) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Self {
            w: store.add(format!("{name}.weight"), uniform(rng, inp, out, bound)),
            b: store.add(format!("{name}.bias"), uniform(rng, 1, out, bound)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = store.var(g, self.w);
        let b = store.var(g, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Length-preserving 1-D convolution over `(batch * len, in)` sequences.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    w: usize,
    b: usize,
    kernel: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        inp: usize,
        out: usize,
        kernel: usize,
    ) -> Self {
        let bound = 1.0 / ((inp * kernel) as f64).sqrt();
        Self {
            w: store.add(format!("{name}.weight"), uniform(rng, kernel * inp, out, bound)),
            b: store.add(format!("{name}.bias"), uniform(rng, 1, out, bound)),
            kernel,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize, len: usize) -> Var {
        let cols = g.im2col(x, batch, len, self.kernel, (self.kernel - 1) / 2);
        let w = store.var(g, self.w);
        let b = store.var(g, self.b);
        let y = g.matmul(cols, w);
        g.add_row(y, b)
    }
}

/// Running statistics of one normalization layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnState {
    fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Normalization state access for one forward pass.
pub enum BnMode<'a> {
    /// Batch statistics; running statistics are updated.
    Train(&'a mut [BnState]),
    /// Frozen running statistics.
    Eval(&'a [BnState]),
}

/// Per-feature normalization with learned scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    gamma: usize,
    beta: usize,
    slot: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, states: &mut Vec<BnState>, name: &str, width: usize) -> Self {
        states.push(BnState::new(width));
        Self {
            gamma: store.add(format!("{name}.gamma"), Matrix::ones((1, width))),
            beta: store.add(format!("{name}.beta"), Matrix::zeros((1, width))),
            slot: states.len() - 1,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mode: &mut BnMode<'_>) -> Var {
        let normed = match mode {
            BnMode::Train(states) => {
                let rows = g.shape(x).0 as f64;
                let (y, mean, var) = g.batch_norm(x, BN_EPS);
                let st = &mut states[self.slot];
                let unbias = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
                for j in 0..mean.len() {
                    st.mean[j] = (1.0 - BN_MOMENTUM) * st.mean[j] + BN_MOMENTUM * mean[j];
                    st.var[j] = (1.0 - BN_MOMENTUM) * st.var[j] + BN_MOMENTUM * var[j] * unbias;
                }
                y
            }
            BnMode::Eval(states) => {
                let st = &states[self.slot];
                let mean = g.constant(Matrix::from_shape_vec((1, st.mean.len()), st.mean.clone()).unwrap());
                let inv = g.constant(Matrix::from_shape_fn((1, st.var.len()), |(_, j)| {
                    1.0 / (st.var[j] + BN_EPS).sqrt()
                }));
                let c = g.sub_row(x, mean);
                g.mul_row(c, inv)
            }
        };
        let gamma = store.var(g, self.gamma);
        let beta = store.var(g, self.beta);
        let y = g.mul_row(normed, gamma);
        g.add_row(y, beta)
    }
}

/// One LSTM layer (gate order input, forget, cell, output).
#[derive(Clone, Copy, Debug)]
pub struct LstmLayer {
    wx: usize,
    wh: usize,
    b: usize,
    hidden: usize,
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, inp: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            wx: store.add(format!("{name}.weight_ih"), uniform(rng, inp, 4 * hidden, bound)),
            wh: store.add(format!("{name}.weight_hh"), uniform(rng, hidden, 4 * hidden, bound)),
            b: store.add(format!("{name}.bias"), uniform(rng, 1, 4 * hidden, bound)),
            hidden,
        }
    }

    /// One step; returns the new `(h, c)`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let wx = store.var(g, self.wx);
        let wh = store.var(g, self.wh);
        let b = store.var(g, self.b);
        let gx = g.matmul(x, wx);
        let gh = g.matmul(h, wh);
        let gates = g.add(gx, gh);
        let gates = g.add_row(gates, b);
        let i = g.slice_cols(gates, 0, hd);
        let f = g.slice_cols(gates, hd, 2 * hd);
        let cand = g.slice_cols(gates, 2 * hd, 3 * hd);
        let o = g.slice_cols(gates, 3 * hd, 4 * hd);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c_new = g.add(keep, write);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }
}

/// Adam with coupled L2 weight decay.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        let zeros: Vec<Matrix> = store.values.iter().map(|p| Matrix::zeros(p.dim())).collect();
        Self {
            lr,
            betas,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; parameters without a gradient are left alone.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (id, p) in store.values.iter_mut().enumerate() {
            let Some(grad) = grads.param(id) else { continue };
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            ndarray::Zip::from(p)
                .and(grad)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + self.weight_decay * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}
