//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are appended
//! in execution order, so walking the tape backwards visits each node only
//! after all of its consumers, and its gradient is complete by then.
//!
//! Leaves are created with [`Tape::param`] (gradient tracked) or
//! [`Tape::constant`]. A tape is meant to be built, differentiated once, and
//! dropped.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
// Unused whenever std is in the build graph; needed for no_std builds.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{bail, Error, Result};
use crate::tensor::{dot, matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Tensor),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Softmax(Var),
    NormalizeRows(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    TileRows(Var),
    BlockMix(Var, Var),
    RowDot(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    differentiated: bool,
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

    /// Leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass; `None` before backward or for
    /// nodes the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            bail!(Shape, "{what}: {:?} vs {:?}", self.shape(a), self.shape(b));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.tracked(&[x]);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let value = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.rows(), x.cols(), data)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    /// `x[m×n] + bias[1×n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        if self.shape(bias) != (1, n) {
            bail!(Shape, "add_row: {:?} with bias {:?}", (m, n), self.shape(bias));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..m {
            for (o, bj) in value.row_mut(i).iter_mut().zip(&b) {
                *o += bj;
            }
        }
        let rg = self.tracked(&[x, bias]);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    /// Scales row `i` of `x[m×n]` by `s[i]` where `s` is `m×1`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        if self.shape(s) != (m, 1) {
            bail!(Shape, "mul_col: {:?} with column {:?}", (m, n), self.shape(s));
        }
        let mut value = self.value(x).clone();
        for i in 0..m {
            let si = self.value(s).data()[i];
            for o in value.row_mut(i) {
                *o *= si;
            }
        }
        let rg = self.tracked(&[x, s]);
        Ok(self.push(value, Op::MulCol(x, s), rg))
    }

    /// Elementwise product with a constant mask (dropout, loss masking).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            bail!(Shape, "mul_const: {:?} vs {:?}", self.shape(x), c.shape());
        }
        let x_val = self.value(x);
        let data = x_val.data().iter().zip(c.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x_val.rows(), x_val.cols(), data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::MulConst(x, c), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), Float::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), Float::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), Float::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), Float::sqrt)
    }

    /// Row-wise softmax. Entries where `mask` is `false` are excluded and
    /// come out exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let value = softmax_rows(self.value(x), mask)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Divides each row by its sum.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let mut value = self.value(x).clone();
        for i in 0..value.rows() {
            let s: f64 = value.row(i).iter().sum();
            if s == 0.0 || !s.is_finite() {
                bail!(NonFinite, "normalize_rows: row {i} sums to {s}");
            }
            for v in value.row_mut(i) {
                *v /= s;
            }
        }
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::NormalizeRows(x), rg))
    }

    /// Sum of all entries, as a `1×1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.tracked(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            bail!(Shape, "concat_cols of nothing");
        };
        let m = self.shape(first).0;
        if let Some(bad) = parts.iter().find(|v| self.shape(**v).0 != m) {
            bail!(Shape, "concat_cols: {} rows vs {:?}", m, self.shape(*bad));
        }
        let n: usize = parts.iter().map(|v| self.shape(*v).1).sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for v in parts {
                data.extend_from_slice(self.value(*v).row(i));
            }
        }
        let value = Tensor::new(m, n, data)?;
        let rg = self.tracked(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if start + len > n || len == 0 {
            bail!(Shape, "slice_cols [{start}, {}) of {m}x{n}", start + len);
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let value = Tensor::new(m, len, data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::SliceCols(x, start), rg))
    }

    /// Stacks `reps` copies of `x` vertically.
    pub fn tile_rows(&mut self, x: Var, reps: usize) -> Result<Var> {
        if reps == 0 {
            bail!(Shape, "tile_rows with zero repetitions");
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(src.len() * reps);
        for _ in 0..reps {
            data.extend_from_slice(src.data());
        }
        let value = Tensor::new(src.rows() * reps, src.cols(), data)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::TileRows(x), rg))
    }

    /// Applies `adj[N×N]` to every consecutive `N`-row block of `x[(B·N)×d]`.
    pub fn block_mix(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (n, n2) = self.shape(adj);
        let (rows, d) = self.shape(x);
        if n != n2 || n == 0 || rows % n != 0 {
            bail!(Shape, "block_mix: adjacency {:?} with features {:?}", (n, n2), (rows, d));
        }
        if !self.value(adj).is_finite() {
            bail!(NonFinite, "block_mix: adjacency has non-finite entries");
        }
        let mut value = Tensor::zeros(rows, d);
        let a = self.value(adj).data();
        let xs = self.value(x).data();
        let block = n * d;
        for (out, inp) in value.data_mut().chunks_mut(block).zip(xs.chunks(block)) {
            matmul_into(a, inp, out, n, n, d);
        }
        let rg = self.tracked(&[adj, x]);
        Ok(self.push(value, Op::BlockMix(adj, x), rg))
    }

    /// Row-wise inner products, `m×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = (0..x.rows()).map(|i| dot(x.row(i), y.row(i))).collect();
        let value = Tensor::new(x.rows(), 1, data)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::RowDot(a, b), rg))
    }

    /// Accumulates d`loss`/d`v` into every tracked node reachable from the
    /// scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.differentiated {
            bail!(Backward, "tape was already differentiated");
        }
        if self.shape(loss) != (1, 1) {
            bail!(Backward, "loss must be scalar, got {:?}", self.shape(loss));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Backward("loss is detached from every parameter".to_string()));
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let (r, c) = nodes[v.0].value.shape();
                let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c));
                f(slot.data_mut());
            };
            let y = &node.value;
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    acc(*a, &mut |ga| matmul_nt_into(gd, bv.data(), ga, m, n, k));
                    acc(*b, &mut |gb| matmul_tn_into(av.data(), gd, gb, m, k, n));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| add_assign(ga, gd));
                    acc(*b, &mut |gb| add_assign(gb, gd));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |ga| add_assign(ga, gd));
                    acc(*b, &mut |gb| ga_sub(gb, gd));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |ga| {
                        for ((o, gi), bi) in ga.iter_mut().zip(gd).zip(bv) {
                            *o += gi * bi;
                        }
                    });
                    acc(*b, &mut |gb| {
                        for ((o, gi), ai) in gb.iter_mut().zip(gd).zip(av) {
                            *o += gi * ai;
                        }
                    });
                }
                Op::Scale(x, s) => acc(*x, &mut |gx| {
                    for (o, gi) in gx.iter_mut().zip(gd) {
                        *o += gi * s;
                    }
                }),
                Op::AddRow(x, bias) => {
                    acc(*x, &mut |gx| add_assign(gx, gd));
                    let n = y.cols();
                    acc(*bias, &mut |gb| {
                        for row in gd.chunks(n) {
                            add_assign(gb, row);
                        }
                    });
                }
                Op::MulCol(x, s) => {
                    let (xv, sv) = (&nodes[x.0].value, nodes[s.0].value.data());
                    let n = xv.cols();
                    acc(*x, &mut |gx| {
                        for (i, (gx_row, g_row)) in gx.chunks_mut(n).zip(gd.chunks(n)).enumerate() {
                            for (o, gi) in gx_row.iter_mut().zip(g_row) {
                                *o += gi * sv[i];
                            }
                        }
                    });
                    acc(*s, &mut |gs| {
                        for (i, o) in gs.iter_mut().enumerate() {
                            *o += dot(&gd[i * n..(i + 1) * n], xv.row(i));
                        }
                    });
                }
                Op::MulConst(x, c) => acc(*x, &mut |gx| {
                    for ((o, gi), ci) in gx.iter_mut().zip(gd).zip(c.data()) {
                        *o += gi * ci;
                    }
                }),
                Op::Relu(x) => acc(*x, &mut |gx| {
                    for ((o, gi), yi) in gx.iter_mut().zip(gd).zip(y.data()) {
                        if *yi > 0.0 {
                            *o += gi;
                        }
                    }
                }),
                Op::Tanh(x) => acc(*x, &mut |gx| {
                    for ((o, gi), yi) in gx.iter_mut().zip(gd).zip(y.data()) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }),
                Op::Sigmoid(x) => acc(*x, &mut |gx| {
                    for ((o, gi), yi) in gx.iter_mut().zip(gd).zip(y.data()) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }),
                Op::Exp(x) => acc(*x, &mut |gx| {
                    for ((o, gi), yi) in gx.iter_mut().zip(gd).zip(y.data()) {
                        *o += gi * yi;
                    }
                }),
                Op::Log(x) => {
                    let xv = nodes[x.0].value.data();
                    acc(*x, &mut |gx| {
                        for ((o, gi), xi) in gx.iter_mut().zip(gd).zip(xv) {
                            *o += gi / xi;
                        }
                    });
                }
                Op::Sqrt(x) => acc(*x, &mut |gx| {
                    for ((o, gi), yi) in gx.iter_mut().zip(gd).zip(y.data()) {
                        // d sqrt at 0 is unbounded; a zero residual has nothing to push.
                        if *yi > 0.0 {
                            *o += gi / (2.0 * yi);
                        }
                    }
                }),
                Op::Softmax(x) => {
                    let n = y.cols();
                    acc(*x, &mut |gx| {
                        for i in 0..y.rows() {
                            let (yr, gr) = (y.row(i), &gd[i * n..(i + 1) * n]);
                            let inner = dot(yr, gr);
                            for ((o, yi), gi) in gx[i * n..(i + 1) * n].iter_mut().zip(yr).zip(gr) {
                                *o += yi * (gi - inner);
                            }
                        }
                    });
                }
                Op::NormalizeRows(x) => {
                    let xv = &nodes[x.0].value;
                    let n = y.cols();
                    acc(*x, &mut |gx| {
                        for i in 0..y.rows() {
                            let s: f64 = xv.row(i).iter().sum();
                            let (yr, gr) = (y.row(i), &gd[i * n..(i + 1) * n]);
                            let inner = dot(yr, gr);
                            for (o, gi) in gx[i * n..(i + 1) * n].iter_mut().zip(gr) {
                                *o += (gi - inner) / s;
                            }
                        }
                    });
                }
                Op::Sum(x) => {
                    let g0 = gd[0];
                    acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g0));
                }
                Op::ConcatCols(parts) => {
                    let n = y.cols();
                    let mut offset = 0;
                    for p in parts {
                        let w = nodes[p.0].value.cols();
                        acc(*p, &mut |gp| {
                            for (gp_row, g_row) in gp.chunks_mut(w).zip(gd.chunks(n)) {
                                add_assign(gp_row, &g_row[offset..offset + w]);
                            }
                        });
                        offset += w;
                    }
                }
                Op::SliceCols(x, start) => {
                    let w = y.cols();
                    let n = nodes[x.0].value.cols();
                    acc(*x, &mut |gx| {
                        for (gx_row, g_row) in gx.chunks_mut(n).zip(gd.chunks(w)) {
                            add_assign(&mut gx_row[*start..*start + w], g_row);
                        }
                    });
                }
                Op::TileRows(x) => {
                    let len = nodes[x.0].value.len();
                    acc(*x, &mut |gx| {
                        for block in gd.chunks(len) {
                            add_assign(gx, block);
                        }
                    });
                }
                Op::BlockMix(adj, x) => {
                    let (av, xv) = (&nodes[adj.0].value, &nodes[x.0].value);
                    let (n, d) = (av.rows(), xv.cols());
                    let block = n * d;
                    acc(*adj, &mut |ga| {
                        for (g_b, x_b) in gd.chunks(block).zip(xv.data().chunks(block)) {
                            matmul_nt_into(g_b, x_b, ga, n, d, n);
                        }
                    });
                    acc(*x, &mut |gx| {
                        for (gx_b, g_b) in gx.chunks_mut(block).zip(gd.chunks(block)) {
                            matmul_tn_into(av.data(), g_b, gx_b, n, n, d);
                        }
                    });
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let n = av.cols();
                    acc(*a, &mut |ga| {
                        for (i, row) in ga.chunks_mut(n).enumerate() {
                            for (o, bj) in row.iter_mut().zip(bv.row(i)) {
                                *o += gd[i] * bj;
                            }
                        }
                    });
                    acc(*b, &mut |gb| {
                        for (i, row) in gb.chunks_mut(n).enumerate() {
                            for (o, aj) in row.iter_mut().zip(av.row(i)) {
                                *o += gd[i] * aj;
                            }
                        }
                    });
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }
}

#[inline]
fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (o, s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}

#[inline]
fn ga_sub(dst: &mut [f64], src: &[f64]) {
    for (o, s) in dst.iter_mut().zip(src) {
        *o -= s;
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with per-row max subtraction. Masked-out (`false`)
/// entries are exactly zero; a row with nothing unmasked is an error.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            bail!(Shape, "softmax mask has {} entries for a {:?} tensor", m.len(), x.shape());
        }
    }
    let n = x.cols();
    let mut out = Tensor::zeros(x.rows(), n);
    for i in 0..x.rows() {
        let keep = |j: usize| mask.map_or(true, |m| m[i * n + j]);
        let row = x.row(i);
        let max = (0..n).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: i });
        }
        let out_row = out.row_mut(i);
        let mut total = 0.0;
        for j in 0..n {
            if keep(j) {
                let e = (row[j] - max).exp();
                out_row[j] = e;
                total += e;
            }
        }
        for v in out_row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over every component
/// of `x`, with central differences of step `h`.
///
/// `f` must map the input to a scalar and be deterministic; it is evaluated
/// twice on the unperturbed input to confirm that.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), core::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(grad_check_report(f, inputs, h)?.into_iter().fold(0.0, f64::max))
}

/// Per-input maximum relative error, in input order.
pub fn grad_check_report<F>(f: F, inputs: &[Tensor], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-8..=1e-4).contains(&h) {
        bail!(InvalidArgument, "finite-difference step {h} outside [1e-8, 1e-4]");
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.shape(out) != (1, 1) {
            bail!(Backward, "grad_check function must return a scalar");
        }
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out).item();
    tape.backward(out)?;

    let again = eval(inputs)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::NotReproducible(format!("f(x) gave {base} then {again}")));
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = Vec::with_capacity(inputs.len());
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        let mut worst: f64 = 0.0;
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].data()[idx];
            work[k].data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic.data()[idx] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        report.push(worst);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::LN_2;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::identity(2));
        let m = t.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let out = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let p = t.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]));
        let q = t.constant(Tensor::from_rows(&[[5.0, 6.0], [7.0, 8.0]]));
        let out = t.matmul(p, q).unwrap();
        assert_eq!(t.value(out).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        let msg = t.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("2x3 by 2x3"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a = Tensor::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6);
        let b = Tensor::from_fn(4, 2, |i, j| ((i * 2 + j * 5) % 7) as f64 * 0.2 - 0.5);
        let err = grad_check_many(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                Ok(t.sum(p))
            },
            &[a, b],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::from_rows(&[[0.0, 0.0, LN_2], [3.0, 3.0, 3.0]]);
        let y = softmax_rows(&x, None).unwrap();
        assert!(close(y.row(0), &[0.25, 0.25, 0.5], 1e-15));
        assert!(close(y.row(1), &[1.0 / 3.0; 3], 1e-15));

        let four = Tensor::filled(1, 4, -7.5);
        assert!(close(softmax_rows(&four, None).unwrap().data(), &[0.25; 4], 1e-15));
    }

    #[test]
    fn softmax_mask_zeroes_entries_and_rejects_empty_rows() {
        let x = Tensor::from_rows(&[[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]);
        let mask = [false, true, true, false, false, false];
        assert_eq!(softmax_rows(&x, Some(&mask)), Err(Error::DegenerateRow { row: 1 }));

        let mask = [false, true, true, true, false, true];
        let y = softmax_rows(&x, Some(&mask)).unwrap();
        assert_eq!(y.get(0, 0), 0.0);
        assert_eq!(y.get(1, 1), 0.0);
        for s in y.row_sums() {
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let x = Tensor::from_rows(&[[1000.0, 999.0, -1000.0]]);
        let y = softmax_rows(&x, None).unwrap();
        assert!(y.is_finite());
        assert!((y.row_sums()[0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let x = Tensor::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.7);
        let w = Tensor::from_fn(3, 4, |i, j| ((i * 4 + j) % 5) as f64 - 2.0);
        let mask: Vec<bool> = (0..12).map(|k| k % 4 != k / 4).collect();
        let err = grad_check(
            |t, v| {
                let s = t.softmax_rows(v, Some(&mask))?;
                let weighted = t.mul_const(s, w.clone())?;
                Ok(t.sum(weighted))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn backward_of_sum_is_ones_and_of_square_is_twice() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_fn(2, 3, |i, j| (i + j) as f64));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0; 6]);

        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[[1.0, -2.0]]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::Backward(_))));

        let c = t.constant(Tensor::zeros(2, 2));
        let s = t.sum(c);
        assert!(matches!(t.backward(s), Err(Error::Backward(_))));

        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::Backward(_))));
    }

    #[test]
    fn grad_check_identity_and_tanh() {
        let x = Tensor::from_rows(&[[0.3, -1.2, 2.0]]);
        let err = grad_check(|t, v| Ok(t.sum(v)), &x, 1e-6).unwrap();
        assert!(err <= 1e-9, "{err}");

        let x = Tensor::scalar(0.5);
        let mut t = Tape::new();
        let v = t.param(x.clone());
        let y = t.tanh(v);
        t.backward(y).unwrap();
        let closed_form = 1.0 - 0.5f64.tanh().powi(2);
        assert!((t.grad(v).unwrap().item() - closed_form).abs() <= 1e-15);
        let err = grad_check(|t, v| Ok(t.tanh(v)), &x, 1e-6).unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_step_and_nondeterminism() {
        let x = Tensor::scalar(1.0);
        assert!(matches!(
            grad_check(|t, v| Ok(t.tanh(v)), &x, 1e-2),
            Err(Error::InvalidArgument(_))
        ));
        let calls = core::cell::Cell::new(0u32);
        let flaky = |t: &mut Tape, v: Var| {
            calls.set(calls.get() + 1);
            Ok(t.scale(v, calls.get() as f64))
        };
        assert!(matches!(grad_check(flaky, &x, 1e-6), Err(Error::NotReproducible(_))));
    }

    #[test]
    fn structural_ops_have_correct_gradients() {
        let x = Tensor::from_fn(4, 3, |i, j| (i as f64 * 0.4 - j as f64 * 0.3).sin());
        let adj = Tensor::from_fn(2, 2, |i, j| 0.2 + (i + 2 * j) as f64 * 0.1);
        let col = Tensor::from_fn(4, 1, |i, _| 0.5 + i as f64 * 0.25);
        let bias = Tensor::from_rows(&[[0.1, -0.2, 0.3]]);
        let err = grad_check_many(
            |t, v| {
                let mixed = t.block_mix(v[1], v[0])?;
                let scaled = t.mul_col(mixed, v[2])?;
                let biased = t.add_row(scaled, v[3])?;
                let left = t.slice_cols(biased, 0, 2)?;
                let right = t.slice_cols(biased, 1, 2)?;
                let cat = t.concat_cols(&[left, right, v[0]])?;
                let top = t.slice_cols(cat, 2, 4)?;
                let rd = t.row_dot(top, top)?;
                let sg = t.sigmoid(rd);
                let e = t.exp(sg);
                let tiled = t.tile_rows(v[2], 2)?;
                let tl = t.log(tiled);
                let s1 = t.sum(e);
                let s2 = t.mean(tl);
                let s = t.add(s1, s2)?;
                Ok(t.sqrt(s))
            },
            &[x, adj, col, bias],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn normalize_rows_gradient() {
        let x = Tensor::from_fn(3, 3, |i, j| 0.5 + ((i * 3 + j) % 4) as f64);
        let w = Tensor::from_fn(3, 3, |i, j| (i as f64) - (j as f64) * 0.5);
        let err = grad_check(
            |t, v| {
                let n = t.normalize_rows(v)?;
                let r = t.relu(n);
                let p = t.mul_const(r, w.clone())?;
                let d = t.sub(p, n)?;
                Ok(t.sum(d))
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}
