//! Recorded reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] owns every intermediate value of one computation. Operations
//! append a node holding the output value and the ids of their inputs; the
//! node list is topologically ordered by construction, so [`Tape::backward`]
//! is a single reverse sweep that visits each node once.
//!
//! ```
//! use groupcl::numeric::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

use std::ops::Range;
use std::sync::Arc;

use super::tensor::{SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Contiguous row ranges, one per graph, partitioning a batched node matrix.
pub type Segments = Arc<[Range<usize>]>;

/// Smallest row norm accepted by [`Tape::row_l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Stack vertically; column counts must agree.
    Rows,
    /// Stack horizontally; row counts must agree.
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Transpose(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    RowSoftmax(Var),
    SegmentSoftmax(Var, Segments),
    RowL2Normalize(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SliceCols(Var, usize),
    Concat(Vec<Var>, Axis),
    SegmentSum(Var, Segments),
    SparseMatMul(Arc<SparseMatrix>, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-writer computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; a zero array when `v` did not influence
    /// the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcastable(lhs: [usize; 2], rhs: [usize; 2]) -> bool {
    (rhs[0] == lhs[0] || rhs[0] == 1) && (rhs[1] == lhs[1] || rhs[1] == 1)
}

#[inline]
fn bcast_get(t: &Tensor, i: usize, j: usize) -> f64 {
    let r = if t.rows() == 1 { 0 } else { i };
    let c = if t.cols() == 1 { 0 } else { j };
    t.get(r, c)
}

/// Sum a broadcast gradient back down to `rows×cols`.
fn reduce_to(g: &Tensor, rows: usize, cols: usize) -> Tensor {
    if g.rows() == rows && g.cols() == cols {
        return g.clone();
    }
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let r = if rows == 1 { 0 } else { i };
            let c = if cols == 1 { 0 } else { j };
            let cur = out.get(r, c);
            out.set(r, c, cur + g.get(i, j));
        }
    }
    out
}

fn check_segments(op: &'static str, segments: &[Range<usize>], rows: usize) -> Result<()> {
    let mut expected = 0;
    for (i, s) in segments.iter().enumerate() {
        if s.start != expected {
            return Err(Error::shape(
                op,
                format!("segment {i} starts at {} but previous ended at {expected}", s.start),
            ));
        }
        if s.end <= s.start {
            return Err(Error::shape(op, format!("empty segment {i}")));
        }
        expected = s.end;
    }
    if expected != rows {
        return Err(Error::shape(
            op,
            format!("segments cover {expected} rows of {rows}"),
        ));
    }
    Ok(())
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

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric(name, "non-finite output"));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn binary_bcast(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta.shape(), tb.shape()) {
            return Err(Error::shape(
                name,
                format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape()),
            ));
        }
        Ok(Tensor::from_fn(ta.rows(), ta.cols(), |i, j| {
            f(ta.get(i, j), bcast_get(tb, i, j))
        }))
    }

    /// `a + b`; `b` may be a row vector, column vector or scalar broadcast
    /// onto `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_bcast("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    /// Elementwise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary_bcast("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -x);
        self.push("negate", out, Op::Neg(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push("log", out, Op::Log(a), &[a])
    }

    /// `log(1 + e^x)` via the overflow-safe `max(x, 0) + log1p(e^{-|x|})`.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(softplus);
        self.push("softplus", out, Op::Softplus(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        self.push("square", out, Op::Square(a), &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.clone();
        for i in 0..t.rows() {
            let row = out.row_slice_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push("row-softmax", out, Op::RowSoftmax(a), &[a])
    }

    /// Softmax down each column, independently within each row segment.
    pub fn segment_softmax(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let t = self.value(a);
        check_segments("segment-row-softmax", segments, t.rows())?;
        let mut out = t.clone();
        for seg in segments.iter() {
            for j in 0..t.cols() {
                let m = seg
                    .clone()
                    .map(|i| t.get(i, j))
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in seg.clone() {
                    let e = (t.get(i, j) - m).exp();
                    out.set(i, j, e);
                    z += e;
                }
                for i in seg.clone() {
                    out.set(i, j, out.get(i, j) / z);
                }
            }
        }
        self.push(
            "segment-row-softmax",
            out,
            Op::SegmentSoftmax(a, segments.clone()),
            &[a],
        )
    }

    /// Scale each row to unit Euclidean norm; rows with norm below
    /// [`MIN_NORM`] are an error.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut out = t.clone();
        for i in 0..t.rows() {
            let norm = t.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < MIN_NORM {
                return Err(Error::numeric(
                    "row-L2-normalize",
                    format!("row {i} has norm {norm:e} below {MIN_NORM:e}"),
                ));
            }
            out.row_slice_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
        self.push("row-L2-normalize", out, Op::RowL2Normalize(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// Sum along each row, giving an `N×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::from_fn(t.rows(), 1, |i, _| t.row_slice(i).iter().sum());
        self.push("sum-rows", out, Op::SumRows(a), &[a])
    }

    /// Row-wise dot product of two equally shaped matrices, as an `N×1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "row-dot",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let p = self.mul(a, b)?;
        self.sum_rows(p)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::shape(
                "slice-cols",
                format!("range {start}..{end} of {} columns", t.cols()),
            ));
        }
        let out = t.slice_cols(start, end);
        self.push("slice-cols", out, Op::SliceCols(a, start), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let [r0, c0] = self.shape(first);
        let out = match axis {
            Axis::Rows => {
                if let Some(v) = parts.iter().find(|&&v| self.shape(v)[1] != c0) {
                    return Err(Error::shape(
                        "concat",
                        format!("column mismatch {:?} vs {c0}", self.shape(*v)),
                    ));
                }
                let rows = parts.iter().map(|&v| self.shape(v)[0]).sum();
                let data = parts
                    .iter()
                    .flat_map(|&v| self.value(v).data().iter().copied())
                    .collect();
                Tensor::new(rows, c0, data)?
            }
            Axis::Cols => {
                if let Some(v) = parts.iter().find(|&&v| self.shape(v)[0] != r0) {
                    return Err(Error::shape(
                        "concat",
                        format!("row mismatch {:?} vs {r0}", self.shape(*v)),
                    ));
                }
                let cols = parts.iter().map(|&v| self.shape(v)[1]).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &v in parts {
                        data.extend_from_slice(self.value(v).row_slice(i));
                    }
                }
                Tensor::new(r0, cols, data)?
            }
        };
        self.push("concat", out, Op::Concat(parts.to_vec(), axis), parts)
    }

    /// Per-segment row sums: `N×d` to `B×d`.
    pub fn segment_sum(&mut self, a: Var, segments: &Segments) -> Result<Var> {
        let t = self.value(a);
        check_segments("segment-sum", segments, t.rows())?;
        let mut out = Tensor::zeros(segments.len(), t.cols());
        for (b, seg) in segments.iter().enumerate() {
            for i in seg.clone() {
                for (o, &x) in out.row_slice_mut(b).iter_mut().zip(t.row_slice(i)) {
                    *o += x;
                }
            }
        }
        self.push("segment-sum", out, Op::SegmentSum(a, segments.clone()), &[a])
    }

    /// `S · a` for a constant sparse `S`.
    pub fn sparse_matmul(&mut self, s: &Arc<SparseMatrix>, a: Var) -> Result<Var> {
        let t = self.value(a);
        if s.cols() != t.rows() {
            return Err(Error::shape(
                "sparse-matmul",
                format!("{}x{} · {:?}", s.rows(), s.cols(), t.shape()),
            ));
        }
        let out = s.matmul_dense(t);
        self.push("sparse-matmul", out, Op::SparseMatMul(s.clone(), a), &[a])
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = g.matmul(&tb.transpose()).expect("matmul grad shape");
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = ta.transpose().matmul(g).expect("matmul grad shape");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let [r, c] = self.shape(*b);
                self.accumulate(grads, *b, reduce_to(g, r, c));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                        g.get(i, j) * bcast_get(tb, i, j)
                    });
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let full = g.zip_map(ta, |x, y| x * y);
                    self.accumulate(grads, *b, reduce_to(&full, tb.rows(), tb.cols()));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(y, |gi, yi| gi * yi)),
            Op::Log(a) => {
                let ga = g.zip_map(self.value(*a), |gi, x| gi / x);
                self.accumulate(grads, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(*a), |gi, x| gi * sigmoid(x));
                self.accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let ga = g.zip_map(self.value(*a), |gi, x| 2.0 * gi * x);
                self.accumulate(grads, *a, ga);
            }
            Op::RowSoftmax(a) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in ga.row_slice_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, segments) => {
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for seg in segments.iter() {
                    for j in 0..y.cols() {
                        let dot: f64 = seg.clone().map(|i| y.get(i, j) * g.get(i, j)).sum();
                        for i in seg.clone() {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::RowL2Normalize(a) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let norm = x.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in ga.row_slice_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = (q - p * dot) / norm;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = self.shape(*a);
                let n = (r * c) as f64;
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item() / n));
            }
            Op::SumRows(a) => {
                let [r, c] = self.shape(*a);
                self.accumulate(grads, *a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            Op::SliceCols(a, start) => {
                let [r, c] = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..g.cols() {
                        ga.set(i, start + j, g.get(i, j));
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let [r, c] = self.shape(p);
                    let gp = match axis {
                        Axis::Rows => g.slice_rows(offset, offset + r),
                        Axis::Cols => g.slice_cols(offset, offset + c),
                    };
                    offset += if *axis == Axis::Rows { r } else { c };
                    self.accumulate(grads, p, gp);
                }
            }
            Op::SegmentSum(a, segments) => {
                let [r, c] = self.shape(*a);
                let mut ga = Tensor::zeros(r, c);
                for (b, seg) in segments.iter().enumerate() {
                    for i in seg.clone() {
                        ga.row_slice_mut(i).copy_from_slice(g.row_slice(b));
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SparseMatMul(s, a) => {
                self.accumulate(grads, *a, s.transpose_matmul_dense(g));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(v: &[f64]) -> Tensor {
        Tensor::row(v).unwrap()
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.softplus(x).unwrap();
        assert_abs_diff_eq!(t.value(y).item(), 2f64.ln(), epsilon = 1e-15);
        let g = t.backward(y).unwrap();
        assert_abs_diff_eq!(g.wrt(x).item(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn softplus_does_not_overflow() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert_abs_diff_eq!(softplus(30.0), 30.0 + (-30f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn row_softmax_uniform() {
        let mut t = Tape::new();
        let x = t.constant(row(&[0.0, 0.0, 0.0]));
        let y = t.row_softmax(x).unwrap();
        for &v in t.value(y).data() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let mut t = Tape::new();
        let x = t.constant(row(&[3.0, 4.0]));
        let y = t.row_l2_normalize(x).unwrap();
        assert_abs_diff_eq!(t.value(y).get(0, 0), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(t.value(y).get(0, 1), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(1, 3));
        assert!(matches!(t.row_l2_normalize(x), Err(Error::Numeric { .. })));
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(x).item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(row(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(row(&[1.0, 2.0]));
        let unused = t.param(Tensor::zeros(2, 2));
        let y = t.sum(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(unused), Tensor::zeros(2, 2));
    }

    #[test]
    fn log_of_zero_is_numeric_error() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        assert!(matches!(t.log(x), Err(Error::Numeric { op: "log", .. })));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(2, 3));
        let b = t.param(Tensor::zeros(2, 3));
        let err = t.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        let c = t.param(Tensor::zeros(3, 2));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn segment_softmax_rejects_bad_segments() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(4, 2));
        let segs: Segments = vec![0..2, 2..2, 2..4].into();
        assert!(t.segment_softmax(a, &segs).is_err());
        let short: Segments = vec![0..3].into();
        assert!(t.segment_softmax(a, &short).is_err());
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let mut t = Tape::new();
        let a = t.param(Tensor::from_fn(3, 2, |i, j| (i + j) as f64));
        let bias = t.param(row(&[1.0, -1.0]));
        let s = t.param(Tensor::scalar(2.0));
        let y = t.add(a, bias).unwrap();
        let y = t.mul(y, s).unwrap();
        let loss = t.sum(y).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(bias).data(), &[6.0, 6.0]);
        // sum(a + bias) = 9 + 0
        assert_abs_diff_eq!(g.wrt(s).item(), 9.0, epsilon = 1e-12);
    }
}
