//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Nodes are appended in evaluation order, so a plain reverse sweep over the
//! node list is a valid reverse topological order.

use std::borrow::Cow;

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    AddRow(Var, Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Gelu(Var),
    Tanh(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize, len: usize },
    SliceCols { x: Var, start: usize, len: usize },
    SelectRow { table: Var, row: usize },
    Reshape(Var),
    Mse(Var, Var),
    Mean(Var),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by parameter slot.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Matrix>,
}

/// Record of primitive operations; parameters are borrowed for the tape's lifetime.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    param_shapes: Vec<Option<(usize, usize)>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn layer_norm_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_shapes: Vec::new(),
        }
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Constant)
    }

    /// A trainable input. `slot` identifies the parameter in the returned
    /// [`Gradients`]; one slot may appear at most once per tape.
    pub fn param(&mut self, m: &'a Matrix, slot: usize) -> Var {
        if self.param_shapes.len() <= slot {
            self.param_shapes.resize(slot + 1, None);
        }
        self.param_shapes[slot] = Some(m.shape());
        self.push(Cow::Borrowed(m), Op::Param(slot))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(Cow::Owned(v), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(Cow::Owned(v), Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).hadamard(self.value(b));
        self.push(Cow::Owned(v), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(Cow::Owned(v), Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Cow::Owned(v), Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(Cow::Owned(v), Op::MatMulT(a, b))
    }

    /// `x · w + b`, with the 1×n row `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut v = self.value(x).matmul(self.value(w));
        let bias = self.value(b);
        assert_eq!(bias.shape(), (1, v.cols()), "affine bias shape");
        for r in 0..v.rows() {
            for (o, bb) in v.row_mut(r).iter_mut().zip(bias.as_slice()) {
                *o += bb;
            }
        }
        self.push(Cow::Owned(v), Op::Affine { x, w, b })
    }

    /// Adds the 1×n row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut v = self.value(a).clone();
        let rv = self.value(row);
        assert_eq!(rv.shape(), (1, v.cols()), "add_row shape");
        for r in 0..v.rows() {
            for (o, bb) in v.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *o += bb;
            }
        }
        self.push(Cow::Owned(v), Op::AddRow(a, row))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = row_softmax(self.value(a));
        self.push(Cow::Owned(v), Op::Softmax(a))
    }

    /// Row-wise layer normalisation with 1×n scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let (mean, rstd) = layer_norm_stats(row, eps);
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (row[c] - mean) * rstd * g[c] + b[c];
            }
        }
        self.push(Cow::Owned(out), Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(Cow::Owned(v), Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Cow::Owned(v), Op::Tanh(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::vstack(&mats).expect("concat_rows column mismatch");
        self.push(Cow::Owned(v), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::hstack(&mats).expect("concat_cols row mismatch");
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_rows(start, len);
        self.push(Cow::Owned(v), Op::SliceRows { x, start, len })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice_cols(start, len);
        self.push(Cow::Owned(v), Op::SliceCols { x, start, len })
    }

    /// Row `row` of `table` as a 1×n matrix (embedding lookup).
    pub fn select_row(&mut self, table: Var, row: usize) -> Var {
        let v = self.value(table).slice_rows(row, 1);
        self.push(Cow::Owned(v), Op::SelectRow { table, row })
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(x).reshape(rows, cols).expect("reshape size mismatch");
        self.push(Cow::Owned(v), Op::Reshape(x))
    }

    /// Mean squared error over all entries, as a 1×1 node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let p = self.value(pred);
        let t = self.value(target);
        assert!(p.same_shape(t), "mse shape mismatch");
        let s = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / p.len() as f64;
        self.push(Cow::Owned(Matrix::scalar(s)), Op::Mse(pred, target))
    }

    /// Mean over all entries, as a 1×1 node.
    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        self.push(Cow::Owned(Matrix::scalar(m)), Op::Mean(x))
    }

    /// Gradients of the scalar `loss` with respect to every parameter slot.
    /// Slots that did not contribute receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "loss must be 1x1, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        let mut params: Vec<Option<Matrix>> = vec![None; self.param_shapes.len()];

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => match &mut params[*slot] {
                    Some(p) => p.add_assign(&g),
                    s @ None => *s = Some(g),
                },
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b));
                    let gb = g.hadamard(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // c = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Affine { x, w, b } => {
                    let gx = g.matmul_t(self.value(*w));
                    let gw = self.value(*x).t_matmul(&g);
                    let gb = column_sums(&g);
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, column_sums(&g));
                    acc(&mut grads, *a, g);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gamma).as_slice();
                    let n = xv.cols() as f64;
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    let mut ggamma = Matrix::zeros(1, xv.cols());
                    let mut gbeta = Matrix::zeros(1, xv.cols());
                    for r in 0..xv.rows() {
                        let row = xv.row(r);
                        let gr = g.row(r);
                        let (mean, rstd) = layer_norm_stats(row, *eps);
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                        let dxhat: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = rstd / n * (n * dxhat[c] - sum_d - xhat[c] * sum_dx);
                        }
                        for c in 0..xv.cols() {
                            ggamma.as_mut_slice()[c] += gr[c] * xhat[c];
                            gbeta.as_mut_slice()[c] += gr[c];
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::Gelu(a) => {
                    let gx = self.value(*a).zip_map(&g, |x, gg| gelu_grad(x) * gg);
                    acc(&mut grads, *a, gx);
                }
                Op::Tanh(a) => {
                    let gx = node.value.zip_map(&g, |y, gg| (1.0 - y * y) * gg);
                    acc(&mut grads, *a, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        acc(&mut grads, *p, g.slice_rows(start, rows));
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        acc(&mut grads, *p, g.slice_cols(start, cols));
                        start += cols;
                    }
                }
                Op::SliceRows { x, start, len } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    gx.set_rows(*start, &g);
                    debug_assert_eq!(g.rows(), *len);
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start, len } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        gx.row_mut(r)[*start..*start + *len].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SelectRow { table, row } => {
                    let tv = self.value(*table);
                    let mut gt = Matrix::zeros(tv.rows(), tv.cols());
                    gt.set_rows(*row, &g);
                    acc(&mut grads, *table, gt);
                }
                Op::Reshape(x) => {
                    let (r, c) = self.value(*x).shape();
                    acc(&mut grads, *x, g.reshape(r, c).expect("reshape back"));
                }
                Op::Mse(p, t) => {
                    let pv = self.value(*p);
                    let tv = self.value(*t);
                    let s = 2.0 * g.as_slice()[0] / pv.len() as f64;
                    let diff = pv.sub(tv).scale(s);
                    acc(&mut grads, *t, diff.scale(-1.0));
                    acc(&mut grads, *p, diff);
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let s = g.as_slice()[0] / xv.len() as f64;
                    acc(&mut grads, *x, Matrix::filled(xv.rows(), xv.cols(), s));
                }
            }
        }

        let params = params
            .into_iter()
            .zip(&self.param_shapes)
            .map(|(g, shape)| match (g, shape) {
                (Some(g), _) => g,
                (None, Some((r, c))) => Matrix::zeros(*r, *c),
                (None, None) => Matrix::zeros(0, 0),
            })
            .collect();
        Ok(Gradients { params })
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}
