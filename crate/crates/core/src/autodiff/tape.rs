use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_at_acc, matmul_bt_acc, matmul_into, Tensor};
use super::{AutodiffError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    OuterSum(Var, Var),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Transpose(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    MaskedSoftmax(Var),
    Attention(Var, Var, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; exact zeros when `v` does not reach the
    /// output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.is_matrix() {
        Ok((t.rows(), t.cols()))
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that does not.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_matrix("matmul", ta)?;
        let (k2, n) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, op_name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op_name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "div", Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// Adds the `1 × n` row `b` to every row of the `m × n` matrix `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (_, n) = require_matrix("add_row", tx)?;
        if tb.shape() != [1, n] {
            return Err(mismatch("add_row", tx, tb));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (v, bv) in row.iter_mut().zip(tb.data()) {
                *v += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddRow(x, b), rg))
    }

    /// `e_ij = c_i + r_j` for column vectors `c: n × 1` and `r: m × 1`.
    pub fn outer_sum(&mut self, c: Var, r: Var) -> Result<Var> {
        let (tc, tr) = (self.value(c), self.value(r));
        let (n, one_c) = require_matrix("outer_sum", tc)?;
        let (m, one_r) = require_matrix("outer_sum", tr)?;
        if one_c != 1 || one_r != 1 {
            return Err(mismatch("outer_sum", tc, tr));
        }
        let mut out = Vec::with_capacity(n * m);
        for &ci in tc.data() {
            out.extend(tr.data().iter().map(|&rj| ci + rj));
        }
        let rg = self.rg(c) || self.rg(r);
        Ok(self.push(Tensor::matrix(n, m, out), Op::OuterSum(c, r), rg))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::Invalid("concat_cols of nothing".into()))?;
        let (rows, _) = require_matrix("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = require_matrix("concat_cols", self.value(p))?;
            if r != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = require_matrix("slice_rows", tx)?;
        if start > end || end > rows {
            return Err(AutodiffError::Invalid(alloc::format!(
                "slice_rows {start}..{end} of {rows} rows"
            )));
        }
        let out = Tensor::matrix(end - start, cols, tx.data()[start * cols..end * cols].to_vec());
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = require_matrix("transpose", tx)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = tx.data()[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(c, r, out), Op::Transpose(x), rg))
    }

    /// `x` for `x ≥ 0`, `slope·x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v >= 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(libm::exp);
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(libm::log);
        let rg = self.rg(x);
        self.push(out, Op::Log(x), rg)
    }

    /// Clips into `[lo, hi]`; the gradient is zero outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(out, Op::Clamp(x, lo, hi), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Row-wise softmax over entries where `mask` is true; masked entries are
    /// exactly zero. The row maximum over unmasked entries is subtracted
    /// before exponentiating.
    pub fn masked_softmax(&mut self, x: Var, mask: &Rc<Vec<bool>>) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = require_matrix("masked_softmax", tx)?;
        if mask.len() != rows * cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_softmax",
                lhs: tx.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let xs = &tx.data()[i * cols..(i + 1) * cols];
            let ms = &mask[i * cols..(i + 1) * cols];
            if !ms.iter().any(|&m| m) {
                return Err(AutodiffError::EmptyMaskRow(i));
            }
            let max = xs
                .iter()
                .zip(ms)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let row = &mut out[i * cols..(i + 1) * cols];
            let mut total = 0.0;
            for j in 0..cols {
                if ms[j] {
                    row[j] = libm::exp(xs[j] - max);
                    total += row[j];
                }
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::MaskedSoftmax(x), rg))
    }

    /// Graph attention weights in one step:
    /// `α_ij = softmax_j(LeakyReLU(src_i + dst_j) + bias_ij)` over the `j`
    /// with `mask_ij`. Same result as `outer_sum`, `leaky_relu`, `add` and
    /// `masked_softmax` chained, with fewer intermediate matrices.
    pub fn attention(
        &mut self,
        src: Var,
        dst: Var,
        mask: &Rc<Vec<bool>>,
        bias: Option<&Tensor>,
        slope: f64,
    ) -> Result<Var> {
        let (ts, td) = (self.value(src), self.value(dst));
        let (n, one_s) = require_matrix("attention", ts)?;
        let (m, one_d) = require_matrix("attention", td)?;
        if one_s != 1 || one_d != 1 || mask.len() != n * m || bias.is_some_and(|b| b.len() != n * m) {
            return Err(mismatch("attention", ts, td));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ms = &mask[i * m..(i + 1) * m];
            if !ms.iter().any(|&v| v) {
                return Err(AutodiffError::EmptyMaskRow(i));
            }
            let row = &mut out[i * m..(i + 1) * m];
            let si = ts.data()[i];
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                if ms[j] {
                    let z = si + td.data()[j];
                    let mut e = if z >= 0.0 { z } else { slope * z };
                    if let Some(b) = bias {
                        e += b.data()[i * m + j];
                    }
                    row[j] = e;
                    max = max.max(e);
                }
            }
            let mut total = 0.0;
            for j in 0..m {
                if ms[j] {
                    row[j] = libm::exp(row[j] - max);
                    total += row[j];
                }
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(src) || self.rg(dst);
        Ok(self.push(Tensor::matrix(n, m, out), Op::Attention(src, dst, slope), rg))
    }

    /// Gradients of a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let shape = self.value(output).shape();
        if self.value(output).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        self.backward_with_seed(output, &Tensor::filled(shape, 1.0))
    }

    /// Vector-Jacobian product: propagates `seed = ∂L/∂output` back through
    /// the tape.
    pub fn backward_with_seed(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let out_val = self.value(output);
        if seed.shape() != out_val.shape() {
            return Err(mismatch("backward seed", out_val, seed));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.clone());
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_bt_acc(g.data(), tb.data(), m, n, k, &mut da);
                    acc(*a, Tensor::matrix(m, k, da));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_at_acc(ta.data(), g.data(), m, k, n, &mut db);
                    acc(*b, Tensor::matrix(k, n, db));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.clone());
                }
                if self.rg(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.clone());
                }
                if self.rg(*b) {
                    acc(*b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, elementwise(g, val(*b), |gv, bv| gv * bv));
                }
                if self.rg(*b) {
                    acc(*b, elementwise(g, val(*a), |gv, av| gv * av));
                }
            }
            Op::Div(a, b) => {
                let tb = val(*b);
                if self.rg(*a) {
                    acc(*a, elementwise(g, tb, |gv, bv| gv / bv));
                }
                if self.rg(*b) {
                    let ta = val(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(ta.data())
                        .zip(tb.data())
                        .map(|((gv, av), bv)| -gv * av / (bv * bv))
                        .collect();
                    acc(*b, Tensor::new(tb.shape().to_vec(), data));
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                if self.rg(*b) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::matrix(1, n, db));
                }
            }
            Op::OuterSum(c, r) => {
                let (n, m) = (g.rows(), g.cols());
                let dc: Vec<f64> = g.data().chunks_exact(m).map(|row| row.iter().sum()).collect();
                let mut dr = vec![0.0; m];
                for row in g.data().chunks_exact(m) {
                    for (d, v) in dr.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*c, Tensor::matrix(n, 1, dc));
                acc(*r, Tensor::matrix(m, 1, dr));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                        }
                        acc(p, Tensor::matrix(rows, w, d));
                    }
                    offset += w;
                }
            }
            Op::SliceRows(x, start) => {
                let tx = val(*x);
                let cols = tx.cols();
                let mut d = Tensor::zeros(tx.shape());
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                acc(*x, d);
            }
            Op::Transpose(x) => {
                let (r, c) = (g.rows(), g.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] = g.data()[i * c + j];
                    }
                }
                acc(*x, Tensor::matrix(c, r, d));
            }
            Op::LeakyRelu(x, slope) => {
                acc(*x, elementwise(g, val(*x), |gv, xv| if xv >= 0.0 { gv } else { slope * gv }));
            }
            Op::Sigmoid(x) => {
                acc(*x, elementwise(g, &node.value, |gv, s| gv * s * (1.0 - s)));
            }
            Op::Exp(x) => acc(*x, elementwise(g, &node.value, |gv, e| gv * e)),
            Op::Log(x) => acc(*x, elementwise(g, val(*x), |gv, xv| gv / xv)),
            Op::Clamp(x, lo, hi) => {
                acc(
                    *x,
                    elementwise(g, val(*x), |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 }),
                );
            }
            Op::Sum(x) => acc(*x, Tensor::filled(val(*x).shape(), g.item())),
            Op::Mean(x) => {
                let t = val(*x);
                acc(*x, Tensor::filled(t.shape(), g.item() / t.len() as f64));
            }
            Op::Attention(src, dst, slope) => {
                let alpha = &node.value;
                let (n, m) = (alpha.rows(), alpha.cols());
                let (ts, td) = (val(*src), val(*dst));
                let mut ds = vec![0.0; n];
                let mut dd = vec![0.0; m];
                for i in 0..n {
                    let arow = &alpha.data()[i * m..(i + 1) * m];
                    let grow = &g.data()[i * m..(i + 1) * m];
                    let dot: f64 = arow.iter().zip(grow).map(|(a, gv)| a * gv).sum();
                    let si = ts.data()[i];
                    for j in 0..m {
                        let a = arow[j];
                        if a == 0.0 {
                            continue;
                        }
                        let de = a * (grow[j] - dot);
                        let dz = if si + td.data()[j] >= 0.0 { de } else { slope * de };
                        ds[i] += dz;
                        dd[j] += dz;
                    }
                }
                acc(*src, Tensor::matrix(n, 1, ds));
                acc(*dst, Tensor::matrix(m, 1, dd));
            }
            Op::MaskedSoftmax(x) => {
                let alpha = &node.value;
                let cols = alpha.cols();
                let mut d = vec![0.0; alpha.len()];
                for ((drow, arow), grow) in d
                    .chunks_exact_mut(cols)
                    .zip(alpha.data().chunks_exact(cols))
                    .zip(g.data().chunks_exact(cols))
                {
                    let dot: f64 = arow.iter().zip(grow).map(|(a, gv)| a * gv).sum();
                    for ((dv, a), gv) in drow.iter_mut().zip(arow).zip(grow) {
                        *dv = a * (gv - dot);
                    }
                }
                acc(*x, Tensor::new(alpha.shape().to_vec(), d));
            }
        }
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.shape().to_vec(), data)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec())
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.0));
        let y = t.param(Tensor::scalar(5.0));
        let z = t.mul(x, y).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.wrt(x).item(), 5.0);
        assert_eq!(g.wrt(y).item(), 2.0);
    }

    #[test]
    fn hand_matmul() {
        let mut t = Tape::new();
        let a = t.constant(m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = t.constant(m(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), [58.0, 64.0, 139.0, 154.0]);
        let bad = t.constant(m(2, 2, &[0.0; 4]));
        assert!(matches!(t.matmul(a, bad), Err(AutodiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn leaky_relu_slope() {
        let mut t = Tape::new();
        let x = t.param(m(1, 3, &[-2.0, 0.0, 3.0]));
        let y = t.leaky_relu(x, 0.01);
        assert_eq!(t.value(y).data(), [-0.02, 0.0, 3.0]);
        let s = t.sum(y);
        assert_eq!(t.backward(s).unwrap().wrt(x).data(), [0.01, 1.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_and_masked() {
        let mut t = Tape::new();
        let x = t.constant(m(2, 5, &[0.3; 10]));
        let mask = Rc::new(alloc::vec![
            true, true, true, true, false, false, false, false, false, true
        ]);
        let y = t.masked_softmax(x, &mask).unwrap();
        assert_eq!(&t.value(y).data()[..5], [0.25, 0.25, 0.25, 0.25, 0.0]);
        assert_eq!(&t.value(y).data()[5..], [0.0, 0.0, 0.0, 0.0, 1.0]);
        let empty = Rc::new(alloc::vec![false; 10]);
        assert_eq!(t.masked_softmax(x, &empty), Err(AutodiffError::EmptyMaskRow(0)));
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut t = Tape::new();
        let x = t.constant(m(1, 2, &[1000.0, 1000.0]));
        let y = t.masked_softmax(x, &Rc::new(alloc::vec![true, true])).unwrap();
        assert_eq!(t.value(y).data(), [0.5, 0.5]);
    }

    #[test]
    fn backward_is_idempotent_and_needs_scalar() {
        let mut t = Tape::new();
        let x = t.param(m(1, 2, &[1.0, 2.0]));
        let y = t.exp(x);
        assert!(matches!(t.backward(y), Err(AutodiffError::NonScalarLoss(_))));
        let s = t.sum(y);
        let g1 = t.backward(s).unwrap().wrt(x);
        let g2 = t.backward(s).unwrap().wrt(x);
        assert_eq!(g1, g2);
    }

    #[test]
    fn unreachable_params_get_zeros() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(1.0));
        let unused = t.param(m(2, 2, &[1.0; 4]));
        let y = t.scale(x, 3.0);
        let g = t.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(4.0));
        let x = t.param(Tensor::scalar(1.0));
        let y = t.mul(c, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).item(), 4.0);
    }

    #[test]
    fn fused_attention_matches_chain() {
        let n = 4;
        let src = m(n, 1, &[0.4, -1.3, 0.9, -0.2]);
        let dst = m(n, 1, &[-0.7, 1.1, 0.05, -2.0]);
        let mask = Rc::new(alloc::vec![
            true, true, false, true, true, true, true, false, false, true, true, true, true, false, false, true
        ]);
        let bias = m(n, n, &(0..n * n).map(|k| (k as f64 * 0.7).sin()).collect::<Vec<_>>());
        let weights = m(n, n, &(0..n * n).map(|k| (k as f64 * 1.3).cos()).collect::<Vec<_>>());
        for b in [None, Some(&bias)] {
            let mut chain = Tape::new();
            let (s1, d1) = (chain.param(src.clone()), chain.param(dst.clone()));
            let e = chain.outer_sum(s1, d1).unwrap();
            let mut e = chain.leaky_relu(e, 0.2);
            if let Some(b) = b {
                let bv = chain.constant(b.clone());
                e = chain.add(e, bv).unwrap();
            }
            let a1 = chain.masked_softmax(e, &mask).unwrap();
            let w1 = chain.constant(weights.clone());
            let l1 = chain.mul(a1, w1).unwrap();
            let l1 = chain.sum(l1);
            let g1 = chain.backward(l1).unwrap();

            let mut fused = Tape::new();
            let (s2, d2) = (fused.param(src.clone()), fused.param(dst.clone()));
            let a2 = fused.attention(s2, d2, &mask, b, 0.2).unwrap();
            let w2 = fused.constant(weights.clone());
            let l2 = fused.mul(a2, w2).unwrap();
            let l2 = fused.sum(l2);
            let g2 = fused.backward(l2).unwrap();

            for (x, y) in chain.value(a1).data().iter().zip(fused.value(a2).data()) {
                assert!((x - y).abs() < 1e-14);
            }
            for (x, y) in g1.wrt(s1).data().iter().zip(g2.wrt(s2).data()) {
                assert!((x - y).abs() < 1e-13);
            }
            for (x, y) in g1.wrt(d1).data().iter().zip(g2.wrt(d2).data()) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }
}
