//! Minimal reverse-mode automatic differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass as a node on a
//! tape. [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients. Sequences are stored row-major as `(batch * len, channels)`
//! matrices with row `b * len + t`, which is what the convolution and pooling
//! primitives expect.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

pub type Matrix = Array2<f64>;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Square(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    SumAll(Var),
    MeanRows(Var),
    SumCols(Var),
    NormalizeRows { x: Var, eps: f64 },
    BatchNorm { x: Var, inv_std: Vec<f64> },
    Im2Col { x: Var, batch: usize, len: usize, kernel: usize, pad: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    MulConst(Var, Matrix),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: HashMap<usize, Var>,
}

impl Gradients {
    /// Gradient with respect to `v`, if any flowed to it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a registered parameter.
    pub fn param(&self, id: usize) -> Option<&Matrix> {
        self.params.get(&id).and_then(|v| self.get(*v))
    }
}

/// One forward pass worth of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// A constant: no gradient is tracked.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A trainable parameter, registered once per graph under `id`.
    pub fn param(&mut self, id: usize, value: &Matrix) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.ng(&[a, b]);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `a (r x c) + row (1 x c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a row vector");
        let value = self.value(a) + self.value(row);
        let ng = self.ng(&[a, row]);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "sub_row expects a row vector");
        let value = self.value(a) - self.value(row);
        let ng = self.ng(&[a, row]);
        self.push(value, Op::SubRow(a, row), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row expects a row vector");
        let value = self.value(a) * self.value(row);
        let ng = self.ng(&[a, row]);
        self.push(value, Op::MulRow(a, row), ng)
    }

    /// `a (r x c) * col (r x 1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.shape(col).1, 1, "mul_col expects a column vector");
        let value = self.value(a) * self.value(col);
        let ng = self.ng(&[a, col]);
        self.push(value, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let ng = self.ng(&[a]);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        let ng = self.ng(&[a]);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.ng(&[a]);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.ng(&[a]);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(&[a]);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        let ng = self.ng(&[a]);
        self.push(value, Op::Sqrt(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let ng = self.ng(&[a]);
        self.push(value, Op::Square(a), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(&[a]);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = self.ng(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.value(*v).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = self.ng(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), idx);
        let ng = self.ng(&[a]);
        self.push(value, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape changes element count");
        let flat: Vec<f64> = src.iter().copied().collect();
        let value = Matrix::from_shape_vec((rows, cols), flat).expect("shape checked");
        let ng = self.ng(&[a]);
        self.push(value, Op::Reshape(a), ng)
    }

    /// Sum of all entries as a 1x1 matrix.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(&[a]);
        self.push(value, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means over rows, shape `1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = v.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        let ng = self.ng(&[a]);
        self.push(value, Op::MeanRows(a), ng)
    }

    /// Row sums, shape `r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(&[a]);
        self.push(value, Op::SumCols(a), ng)
    }

    /// Divides every row by its Euclidean norm plus `eps`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt() + eps;
            row.mapv_inplace(|x| x / n);
        }
        let ng = self.ng(&[a]);
        self.push(value, Op::NormalizeRows { x: a, eps }, ng)
    }

    /// Standardizes every column with its own batch mean and (biased)
    /// variance. Returns the normalized values and the batch statistics.
    pub fn batch_norm(&mut self, a: Var, eps: f64) -> (Var, Vec<f64>, Vec<f64>) {
        let x = self.value(a);
        let rows = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let var: Vec<f64> = x
            .columns()
            .into_iter()
            .zip(mean.iter())
            .map(|(c, m)| c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / rows)
            .collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            for ((v, m), is) in row.iter_mut().zip(mean.iter()).zip(inv_std.iter()) {
                *v = (*v - m) * is;
            }
        }
        let ng = self.ng(&[a]);
        let out = self.push(value, Op::BatchNorm { x: a, inv_std }, ng);
        (out, mean.to_vec(), var)
    }

    /// Unfolds a `(batch * len, c)` sequence into `(batch * len, kernel * c)`
    /// patches with zero padding `pad` on the left; column `j * c + ch` holds
    /// input step `t + j - pad`.
    pub fn im2col(&mut self, a: Var, batch: usize, len: usize, kernel: usize, pad: usize) -> Var {
        let x = self.value(a);
        let c = x.ncols();
        assert_eq!(x.nrows(), batch * len, "im2col row count");
        let mut value = Matrix::zeros((batch * len, kernel * c));
        for b in 0..batch {
            for t in 0..len {
                let out_row = b * len + t;
                for j in 0..kernel {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let src_row = b * len + src as usize;
                    value
                        .slice_mut(s![out_row, j * c..(j + 1) * c])
                        .assign(&x.row(src_row));
                }
            }
        }
        let ng = self.ng(&[a]);
        self.push(
            value,
            Op::Im2Col {
                x: a,
                batch,
                len,
                kernel,
                pad,
            },
            ng,
        )
    }

    /// Non-overlapping temporal max-pooling with window `width`; trailing
    /// steps that do not fill a window are dropped.
    pub fn max_pool(&mut self, a: Var, batch: usize, len: usize, width: usize) -> Var {
        let x = self.value(a);
        let c = x.ncols();
        let out_len = len / width;
        let mut value = Matrix::zeros((batch * out_len, c));
        let mut argmax = vec![0usize; batch * out_len * c];
        for b in 0..batch {
            for t in 0..out_len {
                let o = b * out_len + t;
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_row = 0;
                    for j in 0..width {
                        let r = b * len + t * width + j;
                        let v = x[[r, ch]];
                        if v > best {
                            best = v;
                            best_row = r;
                        }
                    }
                    value[[o, ch]] = best;
                    argmax[o * c + ch] = best_row;
                }
            }
        }
        let ng = self.ng(&[a]);
        self.push(value, Op::MaxPool { x: a, argmax }, ng)
    }

    /// Element-wise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let value = self.value(a) * &mask;
        let ng = self.ng(&[a]);
        self.push(value, Op::MulConst(a, mask), ng)
    }

    /// Backpropagates from the scalar `root` (a 1x1 node).
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward expects a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::ones((1, 1)));

        fn acc(nodes: &[Node], grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        acc(&self.nodes, &mut grads, *a, g.dot(&bv.t()));
                    }
                    if self.nodes[b.0].needs_grad {
                        acc(&self.nodes, &mut grads, *b, av.t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(&self.nodes, &mut grads, *a, g.clone());
                    acc(&self.nodes, &mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&self.nodes, &mut grads, *b, -&g);
                    acc(&self.nodes, &mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&self.nodes, &mut grads, *a, &g * self.value(*b));
                    acc(&self.nodes, &mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, r) => {
                    acc(&self.nodes, &mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&self.nodes, &mut grads, *a, g);
                }
                Op::SubRow(a, r) => {
                    acc(&self.nodes, &mut grads, *r, -g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&self.nodes, &mut grads, *a, g);
                }
                Op::MulRow(a, r) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&self.nodes, &mut grads, *r, gr);
                    acc(&self.nodes, &mut grads, *a, &g * self.value(*r));
                }
                Op::MulCol(a, c) => {
                    let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&self.nodes, &mut grads, *c, gc);
                    acc(&self.nodes, &mut grads, *a, &g * self.value(*c));
                }
                Op::Scale(a, c) => acc(&self.nodes, &mut grads, *a, g * *c),
                Op::AddScalar(a) => acc(&self.nodes, &mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let d = out.mapv(|y| y * (1.0 - y));
                    acc(&self.nodes, &mut grads, *a, g * d);
                }
                Op::Tanh(a) => {
                    let d = out.mapv(|y| 1.0 - y * y);
                    acc(&self.nodes, &mut grads, *a, g * d);
                }
                Op::Relu(a) => {
                    let mut g = g;
                    Zip::from(&mut g)
                        .and(self.value(*a))
                        .for_each(|g, &x| {
                            if x <= 0.0 {
                                *g = 0.0
                            }
                        });
                    acc(&self.nodes, &mut grads, *a, g);
                }
                Op::Sqrt(a) => {
                    let d = out.mapv(|y| 0.5 / y);
                    acc(&self.nodes, &mut grads, *a, g * d);
                }
                Op::Square(a) => {
                    let d = self.value(*a) * 2.0;
                    acc(&self.nodes, &mut grads, *a, g * d);
                }
                Op::SliceCols(a, start) => {
                    let mut full = Matrix::zeros(self.value(*a).dim());
                    let w = g.ncols();
                    full.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&self.nodes, &mut grads, *a, full);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if self.nodes[p.0].needs_grad {
                            acc(&self.nodes, &mut grads, *p, g.slice(s![.., off..off + w]).to_owned());
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        if self.nodes[p.0].needs_grad {
                            acc(&self.nodes, &mut grads, *p, g.slice(s![off..off + h, ..]).to_owned());
                        }
                        off += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut full = Matrix::zeros(self.value(*a).dim());
                    for (i, &src) in idx.iter().enumerate() {
                        let mut row = full.row_mut(src);
                        row += &g.row(i);
                    }
                    acc(&self.nodes, &mut grads, *a, full);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(&self.nodes, &mut grads, *a, Matrix::from_shape_vec(dim, flat).expect("same size"));
                }
                Op::SumAll(a) => {
                    let gv = g[[0, 0]];
                    acc(&self.nodes, &mut grads, *a, Matrix::from_elem(self.value(*a).dim(), gv));
                }
                Op::MeanRows(a) => {
                    let (r, _) = self.value(*a).dim();
                    let row = &g / r as f64;
                    let full = Matrix::from_shape_fn(self.value(*a).dim(), |(_, j)| row[[0, j]]);
                    acc(&self.nodes, &mut grads, *a, full);
                }
                Op::SumCols(a) => {
                    let full = Matrix::from_shape_fn(self.value(*a).dim(), |(i, _)| g[[i, 0]]);
                    acc(&self.nodes, &mut grads, *a, full);
                }
                Op::NormalizeRows { x, eps } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.dim());
                    for ((mut d, xr), gr) in dx.rows_mut().into_iter().zip(xv.rows()).zip(g.rows()) {
                        let r = xr.dot(&xr).sqrt();
                        let n = r + eps;
                        if r > 0.0 {
                            let proj = xr.dot(&gr) / (n * n * r);
                            Zip::from(&mut d).and(&xr).and(&gr).for_each(|d, &xv, &gv| {
                                *d = gv / n - xv * proj;
                            });
                        } else {
                            d.assign(&(&gr / n));
                        }
                    }
                    acc(&self.nodes, &mut grads, *x, dx);
                }
                Op::BatchNorm { x, inv_std } => {
                    let rows = g.nrows() as f64;
                    let xhat = out;
                    let sum_g = g.sum_axis(Axis(0));
                    let sum_gx = (&g * xhat).sum_axis(Axis(0));
                    let mut dx = Matrix::zeros(g.dim());
                    for i in 0..g.nrows() {
                        for j in 0..g.ncols() {
                            dx[[i, j]] = inv_std[j] / rows
                                * (rows * g[[i, j]] - sum_g[j] - xhat[[i, j]] * sum_gx[j]);
                        }
                    }
                    acc(&self.nodes, &mut grads, *x, dx);
                }
                Op::Im2Col {
                    x,
                    batch,
                    len,
                    kernel,
                    pad,
                } => {
                    let c = self.value(*x).ncols();
                    let mut dx = Matrix::zeros(self.value(*x).dim());
                    for b in 0..*batch {
                        for t in 0..*len {
                            let out_row = b * len + t;
                            for j in 0..*kernel {
                                let src = t as isize + j as isize - *pad as isize;
                                if src < 0 || src >= *len as isize {
                                    continue;
                                }
                                let src_row = b * len + src as usize;
                                let mut row = dx.row_mut(src_row);
                                row += &g.slice(s![out_row, j * c..(j + 1) * c]);
                            }
                        }
                    }
                    acc(&self.nodes, &mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let c = g.ncols();
                    let mut dx = Matrix::zeros(self.value(*x).dim());
                    for o in 0..g.nrows() {
                        for ch in 0..c {
                            dx[[argmax[o * c + ch], ch]] += g[[o, ch]];
                        }
                    }
                    acc(&self.nodes, &mut grads, *x, dx);
                }
                Op::MulConst(a, mask) => acc(&self.nodes, &mut grads, *a, g * mask),
            }
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }
}
