//! Reverse-mode autodiff on an append-only tape of matrix operations.
//!
//! The defining property: [`Tape::grad`] emits its vector-Jacobian products
//! as ordinary tape nodes instead of raw buffers, so gradients are
//! themselves differentiable and `grad` composes. That is what lets the
//! distillation loop push a gradient through an entire unrolled training
//! run, including through the inner loop's own gradient computations.
//!
//! Every tensor is a row-major `rows x cols` matrix of `f64` (scalars are
//! `1 x 1`); values are computed eagerly at node creation and never mutated.
//! Handles are `Copy` and tied to their tape.
//!
//! # Panics
//!
//! Shape mismatches and mixing tensors from different tapes are programming
//! errors, not data conditions, and panic with a descriptive message.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU32, Ordering};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
    tape_id: u32,
}

impl Tensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
enum Op {
    /// Differentiable input.
    Leaf,
    /// Input that never receives a gradient of its own (gradients still
    /// propagate across it to nothing; it has no parents).
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    /// 0/1 indicator of positive entries; derivative defined as zero
    /// everywhere (the correct a.e. second derivative of relu).
    ReluMask,
    SoftmaxRows(usize),
    Square(usize),
    Scale(usize, f64),
    Sum(usize),
    SumRows(usize),
    SumCols(usize),
    BroadcastScalar(usize),
    AddRow(usize, usize),
    SelectRows(usize, Rc<[usize]>),
    ScatterAddRows(usize, Rc<[usize]>),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Append-only operation record with eager values.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    id: u32,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input node.
    pub fn leaf(&self, rows: usize, cols: usize, values: &[f64]) -> Tensor {
        assert_eq!(
            values.len(),
            rows * cols,
            "leaf data length {} does not match shape {rows}x{cols}",
            values.len()
        );
        self.push(Op::Leaf, rows, cols, values.to_vec())
    }

    /// Non-differentiable input node.
    pub fn constant(&self, rows: usize, cols: usize, values: &[f64]) -> Tensor {
        assert_eq!(
            values.len(),
            rows * cols,
            "constant data length {} does not match shape {rows}x{cols}",
            values.len()
        );
        self.push(Op::Constant, rows, cols, values.to_vec())
    }

    /// `1 x 1` constant.
    pub fn scalar(&self, value: f64) -> Tensor {
        self.push(Op::Constant, 1, 1, vec![value])
    }

    pub fn ones(&self, rows: usize, cols: usize) -> Tensor {
        self.push(Op::Constant, rows, cols, vec![1.0; rows * cols])
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Tensor {
        self.push(Op::Constant, rows, cols, vec![0.0; rows * cols])
    }

    /// Copy of a node's current values.
    pub fn value(&self, t: Tensor) -> Vec<f64> {
        self.check_tape(t);
        self.nodes.borrow()[t.id].values.clone()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, t: Tensor) -> f64 {
        self.check_tape(t);
        assert!(
            t.rows == 1 && t.cols == 1,
            "scalar_value needs a 1x1 tensor, got {}x{}",
            t.rows,
            t.cols
        );
        self.nodes.borrow()[t.id].values[0]
    }

    pub fn add(&self, a: Tensor, b: Tensor) -> Tensor {
        self.check_same_shape("add", a, b);
        let values = self.with2(a, b, |x, y| x.iter().zip(y).map(|(u, v)| u + v).collect());
        self.push(Op::Add(a.id, b.id), a.rows, a.cols, values)
    }

    pub fn sub(&self, a: Tensor, b: Tensor) -> Tensor {
        self.check_same_shape("sub", a, b);
        let values = self.with2(a, b, |x, y| x.iter().zip(y).map(|(u, v)| u - v).collect());
        self.push(Op::Sub(a.id, b.id), a.rows, a.cols, values)
    }

    /// Elementwise product.
    pub fn mul(&self, a: Tensor, b: Tensor) -> Tensor {
        self.check_same_shape("mul", a, b);
        let values = self.with2(a, b, |x, y| x.iter().zip(y).map(|(u, v)| u * v).collect());
        self.push(Op::Mul(a.id, b.id), a.rows, a.cols, values)
    }

    pub fn matmul(&self, a: Tensor, b: Tensor) -> Tensor {
        self.check_tape(a);
        self.check_tape(b);
        assert_eq!(
            a.cols, b.rows,
            "matmul inner dimensions differ: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        );
        let values = self.with2(a, b, |x, y| k_matmul(x, y, a.rows, a.cols, b.cols));
        self.push(Op::MatMul(a.id, b.id), a.rows, b.cols, values)
    }

    pub fn transpose(&self, a: Tensor) -> Tensor {
        self.check_tape(a);
        let values = self.with1(a, |x| {
            let mut out = vec![0.0; a.rows * a.cols];
            for i in 0..a.rows {
                for j in 0..a.cols {
                    out[j * a.rows + i] = x[i * a.cols + j];
                }
            }
            out
        });
        self.push(Op::Transpose(a.id), a.cols, a.rows, values)
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is taken as 0.
    pub fn relu(&self, a: Tensor) -> Tensor {
        self.check_tape(a);
        let values = self.with1(a, |x| x.iter().map(|&v| v.max(0.0)).collect());
        self.push(Op::Relu(a.id), a.rows, a.cols, values)
    }

    fn relu_mask(&self, a: Tensor) -> Tensor {
        let values = self.with1(a, |x| {
            x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect()
        });
        self.push(Op::ReluMask, a.rows, a.cols, values)
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&self, a: Tensor) -> Tensor {
        self.check_tape(a);
        let values = self.with1(a, |x| k_softmax_rows(x, a.rows, a.cols));
        self.push(Op::SoftmaxRows(a.id), a.rows, a.cols, values)
    }

    pub fn square(&self, a: Tensor) -> Tensor {
        self.check_tape(a);
        let values = self.with1(a, |x| x.iter().map(|&v| v * v).collect());
        self.push(Op::Square(a.id), a.rows, a.cols, values)
    }

    /// Multiplication by a compile-time-known scalar constant.
    pub fn scale(&self, a: Tensor, c: f64) -> Tensor {
        self.check_tape(a);
        let values = self.with1(a, |x| x.iter().map(|&v| c * v).collect());
        self.push(Op::Scale(a.id, c), a.rows, a.cols, values)
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&self, a: Tensor) -> Tensor {
        self.check_tape(a);
        let values = self.with1(a, |x| vec![x.iter().sum()]);
        self.push(Op::Sum(a.id), 1, 1, values)
    }

    /// Row sums, `n x m -> n x 1`.
    pub fn sum_rows(&self, a: Tensor) -> Tensor {
        self.check_tape(a);
        let values = self.with1(a, |x| {
            (0..a.rows)
                .map(|i| x[i * a.cols..][..a.cols].iter().sum())
                .collect()
        });
        self.push(Op::SumRows(a.id), a.rows, 1, values)
    }

    /// Column sums, `n x m -> 1 x m`.
    pub fn sum_cols(&self, a: Tensor) -> Tensor {
        self.check_tape(a);
        let values = self.with1(a, |x| {
            let mut out = vec![0.0; a.cols];
            for i in 0..a.rows {
                for j in 0..a.cols {
                    out[j] += x[i * a.cols + j];
                }
            }
            out
        });
        self.push(Op::SumCols(a.id), 1, a.cols, values)
    }

    /// Mean of all entries, as `1 x 1`.
    pub fn mean(&self, a: Tensor) -> Tensor {
        let s = self.sum(a);
        self.scale(s, 1.0 / a.len() as f64)
    }

    /// Replicate a `1 x 1` value to `rows x cols`.
    pub fn broadcast_scalar(&self, a: Tensor, rows: usize, cols: usize) -> Tensor {
        self.check_tape(a);
        assert!(
            a.rows == 1 && a.cols == 1,
            "broadcast_scalar needs a 1x1 tensor, got {}x{}",
            a.rows,
            a.cols
        );
        let values = self.with1(a, |x| vec![x[0]; rows * cols]);
        self.push(Op::BroadcastScalar(a.id), rows, cols, values)
    }

    /// Add a `1 x m` row vector to every row of an `n x m` matrix.
    pub fn add_row(&self, a: Tensor, row: Tensor) -> Tensor {
        self.check_tape(a);
        self.check_tape(row);
        assert!(
            row.rows == 1 && row.cols == a.cols,
            "add_row needs a 1x{} row vector, got {}x{}",
            a.cols,
            row.rows,
            row.cols
        );
        let values = self.with2(a, row, |x, r| {
            let mut out = x.to_vec();
            for i in 0..a.rows {
                for j in 0..a.cols {
                    out[i * a.cols + j] += r[j];
                }
            }
            out
        });
        self.push(Op::AddRow(a.id, row.id), a.rows, a.cols, values)
    }

    /// Gather rows by index; duplicates allowed.
    pub fn select_rows(&self, a: Tensor, indices: &[usize]) -> Tensor {
        self.check_tape(a);
        for &i in indices {
            assert!(
                i < a.rows,
                "select_rows index {i} out of range for {} rows",
                a.rows
            );
        }
        let idx: Rc<[usize]> = indices.into();
        let values = self.with1(a, |x| {
            let mut out = Vec::with_capacity(indices.len() * a.cols);
            for &i in indices {
                out.extend_from_slice(&x[i * a.cols..][..a.cols]);
            }
            out
        });
        self.push(Op::SelectRows(a.id, idx), indices.len(), a.cols, values)
    }

    /// Scatter-add rows of `a` into an `out_rows x cols` zero matrix at the
    /// given indices; the adjoint of [`Tape::select_rows`].
    pub fn scatter_add_rows(&self, a: Tensor, indices: &[usize], out_rows: usize) -> Tensor {
        self.check_tape(a);
        assert_eq!(
            indices.len(),
            a.rows,
            "scatter_add_rows needs one index per row ({} indices, {} rows)",
            indices.len(),
            a.rows
        );
        for &i in indices {
            assert!(
                i < out_rows,
                "scatter_add_rows index {i} out of range for {out_rows} rows"
            );
        }
        let idx: Rc<[usize]> = indices.into();
        let values = self.with1(a, |x| {
            let mut out = vec![0.0; out_rows * a.cols];
            for (row, &i) in indices.iter().enumerate() {
                for j in 0..a.cols {
                    out[i * a.cols + j] += x[row * a.cols + j];
                }
            }
            out
        });
        self.push(Op::ScatterAddRows(a.id, idx), out_rows, a.cols, values)
    }

    /// Gradients of a scalar `output` with respect to each `wrt` node, as
    /// new differentiable nodes on this tape. Unreachable `wrt` nodes get
    /// zero tensors.
    pub fn grad(&self, output: Tensor, wrt: &[Tensor]) -> Vec<Tensor> {
        self.grad_impl(output, wrt, false)
    }

    /// Like [`Tape::grad`] but treats every `wrt` node as an independent
    /// input: propagation stops there instead of continuing into its
    /// parents. This gives the per-step gradient semantics an unrolled
    /// optimizer needs (the step-k parameters are "inputs" of step k even
    /// though they were computed by step k-1).
    pub(crate) fn grad_stopped(&self, output: Tensor, wrt: &[Tensor]) -> Vec<Tensor> {
        self.grad_impl(output, wrt, true)
    }

    fn grad_impl(&self, output: Tensor, wrt: &[Tensor], stop_at_wrt: bool) -> Vec<Tensor> {
        self.check_tape(output);
        assert!(
            output.rows == 1 && output.cols == 1,
            "grad needs a scalar output, got {}x{}",
            output.rows,
            output.cols
        );
        for w in wrt {
            self.check_tape(*w);
        }
        let start_len = self.len();
        let mut adjoint: Vec<Option<Tensor>> = vec![None; start_len];
        let mut stop = vec![false; start_len];
        if stop_at_wrt {
            for w in wrt {
                stop[w.id] = true;
            }
        }
        adjoint[output.id] = Some(self.ones(1, 1));

        for id in (0..=output.id).rev() {
            let Some(g) = adjoint[id] else { continue };
            if stop[id] && id != output.id {
                continue;
            }
            let op = self.nodes.borrow()[id].op.clone();
            match op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adjoint, a, g);
                    self.accumulate(&mut adjoint, b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adjoint, a, g);
                    let neg = self.scale(g, -1.0);
                    self.accumulate(&mut adjoint, b, neg);
                }
                Op::Mul(a, b) => {
                    let (ha, hb) = (self.handle(a), self.handle(b));
                    let ga = self.mul(g, hb);
                    self.accumulate(&mut adjoint, a, ga);
                    let gb = self.mul(g, ha);
                    self.accumulate(&mut adjoint, b, gb);
                }
                Op::MatMul(a, b) => {
                    let (ha, hb) = (self.handle(a), self.handle(b));
                    let bt = self.transpose(hb);
                    let ga = self.matmul(g, bt);
                    self.accumulate(&mut adjoint, a, ga);
                    let at = self.transpose(ha);
                    let gb = self.matmul(at, g);
                    self.accumulate(&mut adjoint, b, gb);
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::Relu(a) => {
                    let mask = self.relu_mask(self.handle(a));
                    let ga = self.mul(g, mask);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::ReluMask => {}
                Op::SoftmaxRows(a) => {
                    // dx = y * (g - rowsum(y * g)) with y this node's output.
                    let y = self.handle(id);
                    let yg = self.mul(y, g);
                    let row_totals = self.sum_rows(yg);
                    let spread = self.matmul(row_totals, self.ones(1, y.cols));
                    let centered = self.sub(g, spread);
                    let ga = self.mul(y, centered);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::Square(a) => {
                    let doubled = self.scale(self.handle(a), 2.0);
                    let ga = self.mul(g, doubled);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(g, c);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape_of(a);
                    let ga = self.broadcast_scalar(g, rows, cols);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::SumRows(a) => {
                    let (_, cols) = self.shape_of(a);
                    let ga = self.matmul(g, self.ones(1, cols));
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::SumCols(a) => {
                    let (rows, _) = self.shape_of(a);
                    let ga = self.matmul(self.ones(rows, 1), g);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::BroadcastScalar(a) => {
                    let ga = self.sum(g);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::AddRow(a, row) => {
                    self.accumulate(&mut adjoint, a, g);
                    let gr = self.sum_cols(g);
                    self.accumulate(&mut adjoint, row, gr);
                }
                Op::SelectRows(a, idx) => {
                    let (rows, _) = self.shape_of(a);
                    let ga = self.scatter_add_rows(g, &idx, rows);
                    self.accumulate(&mut adjoint, a, ga);
                }
                Op::ScatterAddRows(a, idx) => {
                    let ga = self.select_rows(g, &idx);
                    self.accumulate(&mut adjoint, a, ga);
                }
            }
        }

        wrt.iter()
            .map(|w| {
                adjoint
                    .get(w.id)
                    .copied()
                    .flatten()
                    .unwrap_or_else(|| self.zeros(w.rows, w.cols))
            })
            .collect()
    }

    fn accumulate(&self, adjoint: &mut [Option<Tensor>], id: usize, contribution: Tensor) {
        if id >= adjoint.len() {
            return; // node created during this backward pass; not an ancestor
        }
        adjoint[id] = Some(match adjoint[id] {
            Some(existing) => self.add(existing, contribution),
            None => contribution,
        });
    }

    fn handle(&self, id: usize) -> Tensor {
        let nodes = self.nodes.borrow();
        Tensor {
            id,
            rows: nodes[id].rows,
            cols: nodes[id].cols,
            tape_id: self.id,
        }
    }

    fn shape_of(&self, id: usize) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[id].rows, nodes[id].cols)
    }

    fn push(&self, op: Op, rows: usize, cols: usize, values: Vec<f64>) -> Tensor {
        debug_assert_eq!(values.len(), rows * cols);
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            rows,
            cols,
            values,
        });
        Tensor {
            id,
            rows,
            cols,
            tape_id: self.id,
        }
    }

    fn with1<R>(&self, a: Tensor, f: impl FnOnce(&[f64]) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.id].values)
    }

    fn with2<R>(&self, a: Tensor, b: Tensor, f: impl FnOnce(&[f64], &[f64]) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.id].values, &nodes[b.id].values)
    }

    fn check_tape(&self, t: Tensor) {
        assert_eq!(
            t.tape_id, self.id,
            "tensor belongs to tape {} but was used with tape {}",
            t.tape_id, self.id
        );
    }

    fn check_same_shape(&self, what: &str, a: Tensor, b: Tensor) {
        self.check_tape(a);
        self.check_tape(b);
        assert!(
            a.rows == b.rows && a.cols == b.cols,
            "{what} shape mismatch: {}x{} vs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        );
    }
}

pub(crate) fn k_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let brow = &b[p * m..][..m];
                let orow = &mut out[i * m..][..m];
                for j in 0..m {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
    out
}

pub(crate) fn k_softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        let row = &x[i * cols..][..cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[i * cols..][..cols];
        let mut total = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = libm::exp(v - m);
            orow[j] = e;
            total += e;
        }
        for v in orow.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of `f` at `x` in coordinate `i`.
    fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut hi = x.to_vec();
        let mut lo = x.to_vec();
        hi[i] += h;
        lo[i] -= h;
        (f(&hi) - f(&lo)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn values_of_basic_ops() {
        let t = Tape::new();
        let a = t.leaf(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = t.leaf(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(t.value(t.add(a, b)), vec![6.0, 8.0, 10.0, 12.0]);
        assert_eq!(t.value(t.sub(b, a)), vec![4.0, 4.0, 4.0, 4.0]);
        assert_eq!(t.value(t.mul(a, b)), vec![5.0, 12.0, 21.0, 32.0]);
        assert_eq!(t.value(t.matmul(a, b)), vec![19.0, 22.0, 43.0, 50.0]);
        assert_eq!(t.value(t.transpose(a)), vec![1.0, 3.0, 2.0, 4.0]);
        assert_eq!(t.scalar_value(t.sum(a)), 10.0);
        assert_eq!(t.scalar_value(t.mean(a)), 2.5);
        assert_eq!(t.value(t.sum_rows(a)), vec![3.0, 7.0]);
        assert_eq!(t.value(t.sum_cols(a)), vec![4.0, 6.0]);
    }

    #[test]
    fn relu_and_square_values() {
        let t = Tape::new();
        let a = t.leaf(1, 4, &[-2.0, 0.0, 1.5, -0.5]);
        assert_eq!(t.value(t.relu(a)), vec![0.0, 0.0, 1.5, 0.0]);
        assert_eq!(t.value(t.square(a)), vec![4.0, 0.0, 2.25, 0.25]);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let t = Tape::new();
        let a = t.leaf(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]);
        let y = t.value(t.softmax_rows(a));
        for i in 0..2 {
            let row = &y[i * 3..][..3];
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        // Extreme logits stay finite thanks to max subtraction.
        assert!((y[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn select_and_scatter_roundtrip() {
        let t = Tape::new();
        let a = t.leaf(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let sel = t.select_rows(a, &[2, 0, 2]);
        assert_eq!(t.value(sel), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let back = t.scatter_add_rows(sel, &[2, 0, 2], 3);
        assert_eq!(t.value(back), vec![1.0, 2.0, 0.0, 0.0, 10.0, 12.0]);
    }

    #[test]
    fn gradient_of_simple_quadratic() {
        // f = sum((a - b)^2): df/da = 2(a - b), df/db = -2(a - b).
        let t = Tape::new();
        let a = t.leaf(1, 3, &[1.0, 2.0, 3.0]);
        let b = t.leaf(1, 3, &[0.5, 0.5, 0.5]);
        let loss = t.sum(t.square(t.sub(a, b)));
        let grads = t.grad(loss, &[a, b]);
        assert_eq!(t.value(grads[0]), vec![1.0, 3.0, 5.0]);
        assert_eq!(t.value(grads[1]), vec![-1.0, -3.0, -5.0]);
    }

    #[test]
    fn unreachable_wrt_gets_zeros() {
        let t = Tape::new();
        let a = t.leaf(1, 2, &[1.0, 2.0]);
        let b = t.leaf(1, 2, &[3.0, 4.0]);
        let loss = t.sum(a);
        let grads = t.grad(loss, &[b]);
        assert_eq!(t.value(grads[0]), vec![0.0, 0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let t = Tape::new();
        let a = t.leaf(1, 3, &[-1.0, 0.0, 2.0]);
        let loss = t.sum(t.relu(a));
        let g = t.grad(loss, &[a]);
        assert_eq!(t.value(g[0]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn matmul_softmax_chain_matches_finite_differences() {
        // f(x) = sum(square(softmax_rows(x W))) for fixed W.
        let w_data: Vec<f64> = (0..12)
            .map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4)
            .collect();
        let f = |x: &[f64]| -> f64 {
            let t = Tape::new();
            let xt = t.leaf(2, 4, x);
            let w = t.constant(4, 3, &w_data);
            let y = t.softmax_rows(t.matmul(xt, w));
            t.scalar_value(t.sum(t.square(y)))
        };
        let x0: Vec<f64> = (0..8).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let t = Tape::new();
        let xt = t.leaf(2, 4, &x0);
        let w = t.constant(4, 3, &w_data);
        let y = t.softmax_rows(t.matmul(xt, w));
        let loss = t.sum(t.square(y));
        let g = t.value(t.grad(loss, &[xt])[0]);
        for (i, &g_i) in g.iter().enumerate() {
            let fd = central_diff(&f, &x0, i, 1e-6);
            assert!(rel_err(g_i, fd) < 1e-6, "coord {i}: ad {g_i} fd {fd}");
        }
    }

    #[test]
    fn mlp_loss_gradient_matches_finite_differences_many_points() {
        // Two-linear-layer relu MLP with mean-squared error; 100 random
        // parameter points, one random coordinate each.
        let mut rng = crate::rng::Rng::seed(77);
        for trial in 0..100 {
            let (n_in, n_h, n_out, n_rows) = (3, 4, 2, 5);
            let n_params = n_in * n_h + n_h * n_out;
            let params: Vec<f64> = (0..n_params).map(|_| rng.range(-1.0, 1.0)).collect();
            let x_data: Vec<f64> = (0..n_rows * n_in).map(|_| rng.range(-1.0, 1.0)).collect();
            let y_data: Vec<f64> = (0..n_rows * n_out).map(|_| rng.range(-1.0, 1.0)).collect();
            let eval = |p: &[f64]| -> f64 {
                let t = Tape::new();
                let w1 = t.leaf(n_in, n_h, &p[..n_in * n_h]);
                let w2 = t.leaf(n_h, n_out, &p[n_in * n_h..]);
                let x = t.constant(n_rows, n_in, &x_data);
                let y = t.constant(n_rows, n_out, &y_data);
                let h = t.relu(t.matmul(x, w1));
                let out = t.matmul(h, w2);
                t.scalar_value(t.mean(t.square(t.sub(out, y))))
            };
            let t = Tape::new();
            let w1 = t.leaf(n_in, n_h, &params[..n_in * n_h]);
            let w2 = t.leaf(n_h, n_out, &params[n_in * n_h..]);
            let x = t.constant(n_rows, n_in, &x_data);
            let y = t.constant(n_rows, n_out, &y_data);
            let h = t.relu(t.matmul(x, w1));
            let out = t.matmul(h, w2);
            let loss = t.mean(t.square(t.sub(out, y)));
            let grads = t.grad(loss, &[w1, w2]);
            let flat: Vec<f64> = t
                .value(grads[0])
                .into_iter()
                .chain(t.value(grads[1]))
                .collect();
            let coord = rng.index(n_params);
            let fd = central_diff(&eval, &params, coord, 1e-5);
            assert!(
                rel_err(flat[coord], fd) < 1e-5,
                "trial {trial} coord {coord}: ad {} fd {fd}",
                flat[coord]
            );
        }
    }

    #[test]
    fn gradient_linearity_is_exact_for_power_of_two_weights() {
        // Scaling by powers of two commutes exactly through every float op.
        let x0 = [0.7, -0.3, 1.9];
        let t = Tape::new();
        let x = t.leaf(1, 3, &x0);
        let f = t.sum(t.square(x));
        let g = t.sum(t.relu(x));
        let combined = t.add(t.scale(f, 2.0), t.scale(g, 0.5));
        let grad_combined = t.value(t.grad(combined, &[x])[0]);
        let grad_f = t.value(t.grad(f, &[x])[0]);
        let grad_g = t.value(t.grad(g, &[x])[0]);
        for i in 0..3 {
            assert_eq!(grad_combined[i], 2.0 * grad_f[i] + 0.5 * grad_g[i]);
        }
    }

    #[test]
    fn gradient_linearity_holds_for_generic_weights() {
        let x0 = [0.7, -0.3, 1.9, 0.4];
        let t = Tape::new();
        let x = t.leaf(1, 4, &x0);
        let f = t.sum(t.square(x));
        let g = t.mean(t.relu(x));
        let combined = t.add(t.scale(f, 1.7), t.scale(g, -2.3));
        let grad_combined = t.value(t.grad(combined, &[x])[0]);
        let grad_f = t.value(t.grad(f, &[x])[0]);
        let grad_g = t.value(t.grad(g, &[x])[0]);
        for i in 0..4 {
            let expect = 1.7 * grad_f[i] - 2.3 * grad_g[i];
            assert!((grad_combined[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn second_order_grad_of_grad() {
        // f(x) = sum(x^4) entrywise via square(square): d2f/dx2 = 12 x^2.
        let t = Tape::new();
        let x = t.leaf(1, 3, &[1.0, -2.0, 0.5]);
        let f = t.sum(t.square(t.square(x)));
        let g1 = t.grad(f, &[x])[0];
        // Differentiate the first component of the gradient.
        let probe = t.constant(1, 3, &[1.0, 0.0, 0.0]);
        let g1_component = t.sum(t.mul(g1, probe));
        let g2 = t.value(t.grad(g1_component, &[x])[0]);
        assert!((g2[0] - 12.0).abs() < 1e-12);
        assert_eq!(g2[1], 0.0);
        assert_eq!(g2[2], 0.0);
    }

    #[test]
    fn second_order_matches_finite_differences_of_first_gradient() {
        let mut rng = crate::rng::Rng::seed(5);
        for trial in 0..20 {
            let x0: Vec<f64> = (0..4).map(|_| rng.range(-1.5, 1.5)).collect();
            let w_data: Vec<f64> = (0..8).map(|_| rng.range(-1.0, 1.0)).collect();
            // gradient of f = sum(softmax(x W)^2) as a function of x
            let grad_at = |xv: &[f64]| -> Vec<f64> {
                let t = Tape::new();
                let x = t.leaf(1, 4, xv);
                let w = t.constant(4, 2, &w_data);
                let f = t.sum(t.square(t.softmax_rows(t.matmul(x, w))));
                t.value(t.grad(f, &[x])[0])
            };
            let t = Tape::new();
            let x = t.leaf(1, 4, &x0);
            let w = t.constant(4, 2, &w_data);
            let f = t.sum(t.square(t.softmax_rows(t.matmul(x, w))));
            let g1 = t.grad(f, &[x])[0];
            let coord = rng.index(4);
            let probe: Vec<f64> = (0..4).map(|i| (i == coord) as usize as f64).collect();
            let pt = t.constant(1, 4, &probe);
            let comp = t.sum(t.mul(g1, pt));
            let hess_row = t.value(t.grad(comp, &[x])[0]);
            let h = 1e-5;
            for j in 0..4 {
                let mut hi = x0.clone();
                let mut lo = x0.clone();
                hi[j] += h;
                lo[j] -= h;
                let fd = (grad_at(&hi)[coord] - grad_at(&lo)[coord]) / (2.0 * h);
                assert!(
                    rel_err(hess_row[j], fd) < 1e-4,
                    "trial {trial} ({coord},{j}): ad {} fd {fd}",
                    hess_row[j]
                );
            }
        }
    }

    #[test]
    fn grad_stopped_blocks_flow_through_wrt() {
        // y = x^2 (as mul), z = sum(y^2). Full grad wrt x sees the chain;
        // stopped grad wrt y treats y as an input: dz/dy = 2y.
        let t = Tape::new();
        let x = t.leaf(1, 2, &[3.0, -1.0]);
        let y = t.mul(x, x);
        let z = t.sum(t.square(y));
        let gy = t.grad_stopped(z, &[y])[0];
        assert_eq!(t.value(gy), vec![18.0, 2.0]);
        let gx_full = t.grad(z, &[x])[0];
        // dz/dx = 4 x^3.
        assert_eq!(t.value(gx_full), vec![108.0, -4.0]);
    }

    #[test]
    fn same_ops_same_bits() {
        let run = || {
            let t = Tape::new();
            let a = t.leaf(3, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
            let b = t.leaf(3, 3, &[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]);
            let y = t.softmax_rows(t.matmul(a, b));
            let loss = t.mean(t.square(y));
            let g = t.grad(loss, &[a])[0];
            (t.scalar_value(loss), t.value(g))
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_rejects_mismatched_shapes() {
        let t = Tape::new();
        let a = t.leaf(1, 2, &[1.0, 2.0]);
        let b = t.leaf(2, 1, &[1.0, 2.0]);
        let _ = t.add(a, b);
    }

    #[test]
    #[should_panic(expected = "belongs to tape")]
    fn ops_reject_cross_tape_tensors() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(1, 1, &[1.0]);
        let b = t2.leaf(1, 1, &[2.0]);
        let _ = t1.add(a, b);
    }

    #[test]
    #[should_panic(expected = "scalar output")]
    fn grad_rejects_non_scalar_output() {
        let t = Tape::new();
        let a = t.leaf(1, 2, &[1.0, 2.0]);
        let _ = t.grad(a, &[a]);
    }
}
