//! Reverse-mode differentiation over row-major 2-D tensors.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass walks it once in reverse.
//! Parameters live in one flat vector; layers refer to them by offset and
//! their gradients accumulate into a matching flat buffer.

use matrixmultiply::dgemm;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor shape mismatch");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `c (m×n) += a (m×k) · b (k×n)` with explicit strides so transposes are free.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe matrices that lie inside the given slices,
    // which the callers guarantee through the tensor shapes.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    /// `x · W + b`, `W` stored row-major `in × out` at `weight`, then `b` at `bias`.
    Linear { x: NodeId, weight: usize, bias: usize },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Gather { x: NodeId, index: Vec<usize> },
    /// Max over consecutive blocks of `group` rows; `arg` holds the winning row per output entry.
    GroupMax { x: NodeId, arg: Vec<usize> },
    ConcatCols(Vec<NodeId>),
    /// Each output row is a weighted sum of three input rows.
    Interpolate { x: NodeId, index: Vec<[usize; 3]>, weight: Vec<[f64; 3]> },
    /// Euclidean norm of each row.
    RowNorm(NodeId),
}

#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.ops.len() - 1
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    pub fn linear(&mut self, params: &[f64], x: NodeId, weight: usize, out: usize) -> NodeId {
        let xin = &self.values[x];
        let (rows, k) = (xin.rows, xin.cols);
        let bias = weight + k * out;
        let mut y = Tensor::zeros(rows, out);
        for r in 0..rows {
            y.data[r * out..(r + 1) * out].copy_from_slice(&params[bias..bias + out]);
        }
        gemm(
            rows,
            k,
            out,
            &xin.data,
            (k as isize, 1),
            &params[weight..bias],
            (out as isize, 1),
            &mut y.data,
            1.0,
        );
        self.push(Op::Linear { x, weight, bias }, y)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = &self.values[x];
        let y = Tensor::from_rows(v.rows, v.cols, v.data.iter().map(|&a| a.max(0.0)).collect());
        self.push(Op::Relu(x), y)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let y = Tensor::from_rows(va.rows, va.cols, va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect());
        self.push(Op::Add(a, b), y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let y = Tensor::from_rows(va.rows, va.cols, va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect());
        self.push(Op::Mul(a, b), y)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = &self.values[x];
        let y = Tensor::from_rows(v.rows, v.cols, v.data.iter().map(|&a| sigmoid(a)).collect());
        self.push(Op::Sigmoid(x), y)
    }

    pub fn gather(&mut self, x: NodeId, index: Vec<usize>) -> NodeId {
        let v = &self.values[x];
        let mut data = Vec::with_capacity(index.len() * v.cols);
        for &i in &index {
            data.extend_from_slice(v.row(i));
        }
        let y = Tensor::from_rows(index.len(), v.cols, data);
        self.push(Op::Gather { x, index }, y)
    }

    pub fn group_max(&mut self, x: NodeId, group: usize) -> NodeId {
        let v = &self.values[x];
        assert!(group > 0 && v.rows % group == 0, "rows not divisible by group size");
        let out_rows = v.rows / group;
        let mut y = Tensor::zeros(out_rows, v.cols);
        let mut arg = vec![0; out_rows * v.cols];
        for g in 0..out_rows {
            for c in 0..v.cols {
                let mut best = g * group;
                for r in g * group + 1..(g + 1) * group {
                    if v.data[r * v.cols + c] > v.data[best * v.cols + c] {
                        best = r;
                    }
                }
                y.data[g * v.cols + c] = v.data[best * v.cols + c];
                arg[g * v.cols + c] = best;
            }
        }
        self.push(Op::GroupMax { x, arg }, y)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let rows = self.values[parts[0]].rows;
        let cols: usize = parts.iter().map(|&p| self.values[p].cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in &parts {
                let v = &self.values[p];
                assert_eq!(v.rows, rows, "concat row mismatch");
                data.extend_from_slice(v.row(r));
            }
        }
        self.push(Op::ConcatCols(parts), Tensor::from_rows(rows, cols, data))
    }

    pub fn interpolate(&mut self, x: NodeId, index: Vec<[usize; 3]>, weight: Vec<[f64; 3]>) -> NodeId {
        let v = &self.values[x];
        let mut y = Tensor::zeros(index.len(), v.cols);
        for (r, (idx, w)) in index.iter().zip(&weight).enumerate() {
            let out = &mut y.data[r * v.cols..(r + 1) * v.cols];
            for k in 0..3 {
                for (o, s) in out.iter_mut().zip(v.row(idx[k])) {
                    *o += w[k] * s;
                }
            }
        }
        self.push(Op::Interpolate { x, index, weight }, y)
    }

    pub fn row_norm(&mut self, x: NodeId) -> NodeId {
        let v = &self.values[x];
        let data = (0..v.rows).map(|r| v.row(r).iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
        self.push(Op::RowNorm(x), Tensor::from_rows(v.rows, 1, data))
    }

    /// Propagates the given output adjoints back to the parameters, adding
    /// into `grad`.
    pub fn backward(&self, params: &[f64], seeds: &[(NodeId, &[f64])], grad: &mut [f64]) {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        for (id, g) in seeds {
            assert_eq!(g.len(), self.values[*id].data.len(), "seed shape mismatch");
            accumulate(&mut adj, *id, g.len(), |a| {
                for (x, y) in a.iter_mut().zip(g.iter()) {
                    *x += y;
                }
            });
        }
        for id in (0..self.ops.len()).rev() {
            let Some(g) = adj[id].take() else {
                continue;
            };
            let y = &self.values[id];
            match &self.ops[id] {
                Op::Input => {}
                Op::Linear { x, weight, bias } => {
                    let xv = &self.values[*x];
                    let (rows, k, out) = (xv.rows, xv.cols, y.cols);
                    for r in 0..rows {
                        for (gb, gy) in grad[*bias..*bias + out].iter_mut().zip(&g[r * out..(r + 1) * out]) {
                            *gb += gy;
                        }
                    }
                    // dW += xᵀ · g
                    gemm(
                        k,
                        rows,
                        out,
                        &xv.data,
                        (1, k as isize),
                        &g,
                        (out as isize, 1),
                        &mut grad[*weight..*bias],
                        1.0,
                    );
                    if self.needs_grad(*x) {
                        // dx += g · Wᵀ
                        let w = &params[*weight..*bias];
                        accumulate(&mut adj, *x, rows * k, |a| {
                            gemm(rows, out, k, &g, (out as isize, 1), w, (1, out as isize), a, 1.0)
                        });
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.values[*x].data;
                    accumulate(&mut adj, *x, g.len(), |a| {
                        for i in 0..g.len() {
                            if xv[i] > 0.0 {
                                a[i] += g[i];
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    for x in [*a, *b] {
                        accumulate(&mut adj, x, g.len(), |acc| {
                            for (s, t) in acc.iter_mut().zip(&g) {
                                *s += t;
                            }
                        });
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.values[*a].data, &self.values[*b].data);
                    accumulate(&mut adj, *a, g.len(), |acc| {
                        for i in 0..g.len() {
                            acc[i] += g[i] * vb[i];
                        }
                    });
                    accumulate(&mut adj, *b, g.len(), |acc| {
                        for i in 0..g.len() {
                            acc[i] += g[i] * va[i];
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    accumulate(&mut adj, *x, g.len(), |acc| {
                        for i in 0..g.len() {
                            let s = y.data[i];
                            acc[i] += g[i] * s * (1.0 - s);
                        }
                    });
                }
                Op::Gather { x, index } => {
                    if !self.needs_grad(*x) {
                        continue;
                    }
                    let xv = &self.values[*x];
                    let cols = xv.cols;
                    accumulate(&mut adj, *x, xv.data.len(), |acc| {
                        for (r, &i) in index.iter().enumerate() {
                            for c in 0..cols {
                                acc[i * cols + c] += g[r * cols + c];
                            }
                        }
                    });
                }
                Op::GroupMax { x, arg } => {
                    if !self.needs_grad(*x) {
                        continue;
                    }
                    let xv = &self.values[*x];
                    let cols = xv.cols;
                    accumulate(&mut adj, *x, xv.data.len(), |acc| {
                        for (o, &r) in arg.iter().enumerate() {
                            acc[r * cols + o % cols] += g[o];
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = &self.values[p];
                        let pc = pv.cols;
                        if self.needs_grad(p) {
                            accumulate(&mut adj, p, pv.data.len(), |acc| {
                                for r in 0..y.rows {
                                    for c in 0..pc {
                                        acc[r * pc + c] += g[r * y.cols + offset + c];
                                    }
                                }
                            });
                        }
                        offset += pc;
                    }
                }
                Op::Interpolate { x, index, weight } => {
                    if !self.needs_grad(*x) {
                        continue;
                    }
                    let xv = &self.values[*x];
                    let cols = xv.cols;
                    accumulate(&mut adj, *x, xv.data.len(), |acc| {
                        for (r, (idx, w)) in index.iter().zip(weight).enumerate() {
                            for k in 0..3 {
                                for c in 0..cols {
                                    acc[idx[k] * cols + c] += w[k] * g[r * cols + c];
                                }
                            }
                        }
                    });
                }
                Op::RowNorm(x) => {
                    let xv = &self.values[*x];
                    let cols = xv.cols;
                    accumulate(&mut adj, *x, xv.data.len(), |acc| {
                        for r in 0..xv.rows {
                            let n = y.data[r];
                            if n > 0.0 {
                                for c in 0..cols {
                                    acc[r * cols + c] += g[r] * xv.data[r * cols + c] / n;
                                }
                            }
                        }
                    });
                }
            }
        }
    }

    /// Whether any parameter lies upstream of `id`.
    fn needs_grad(&self, id: NodeId) -> bool {
        !matches!(self.ops[id], Op::Input)
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = adj[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
