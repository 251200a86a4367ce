//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so the tape is always a topological
//! order of the computation and [`Tape::backward`] is a single reverse sweep.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::matrix::Matrix;
use super::sparse::SparseAdjacency;
use crate::error::NumericError;

/// Denominators with magnitude below this divide to zero.
pub const SAFE_DIV_EPS: f64 = 1e-12;

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Linear(Var, Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Arc<[f64]>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[u32]>),
    SegmentSum(Var, Arc<[usize]>),
    NeighborSum(Var, Arc<SparseAdjacency>),
    EdgeSum { w: Var, adj: Arc<SparseAdjacency>, vals: Option<Arc<[f64]>> },
    SimilarityRatio { h: Var, adj: Arc<SparseAdjacency>, vals: Arc<[f64]> },
    SafeDiv(Var, Var),
    CenterCols(Var),
    Sum(Var),
    Mean(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    ColAffine { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch normalisation.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, used for running estimates.
    pub var: Vec<f64>,
    /// Biased variance, the one used to normalise the batch.
    pub biased_var: Vec<f64>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for the leaf `v`, zeros if `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Matrix::zeros(self.shapes[v.0].0, self.shapes[v.0].1),
        }
    }
}

/// A recording of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    kinks: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), kinks: FNV_OFFSET }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every branch taken by non-smooth operations so far.
    ///
    /// Two evaluations with the same signature lie on the same smooth piece of
    /// the function, which is what finite-difference checks need.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    fn mix(&mut self, bit: bool) {
        self.kinks = (self.kinks ^ u64::from(bit)).wrapping_mul(FNV_PRIME);
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A trainable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), g)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), g)
    }

    /// Adds a `1 x c` row to every row of `a`.
    /// `x * w + b` with `b` a single row added to every row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1, "linear bias must be a single row");
        let mut v = self.value(x).matmul(self.value(w));
        assert_eq!(bias.cols(), v.cols(), "linear bias width");
        let cols = v.cols();
        for chunk in v.as_mut_slice().chunks_mut(cols.max(1)) {
            for (o, c) in chunk.iter_mut().zip(bias.as_slice()) {
                *o += c;
            }
        }
        let g = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(v, Op::Linear(x, w, b), g)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        assert_eq!(r.cols(), self.value(a).cols(), "add_row width");
        let mut v = self.value(a).clone();
        let cols = v.cols();
        let r = self.value(row).as_slice().to_vec();
        for chunk in v.as_mut_slice().chunks_mut(cols.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        let g = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), g)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let g = self.ng(a);
        self.push(v, Op::Scale(a, s), g)
    }

    /// Multiplies row `r` of `a` by `s[r]`.
    pub fn scale_rows(&mut self, a: Var, s: Arc<[f64]>) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.rows(), s.len(), "scale_rows length");
        for (r, &f) in s.iter().enumerate() {
            for x in v.row_mut(r) {
                *x *= f;
            }
        }
        let g = self.ng(a);
        self.push(v, Op::ScaleRows(a, s), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let bits: Vec<bool> = self.value(a).as_slice().iter().map(|&x| x > 0.0).collect();
        for b in bits {
            self.mix(b);
        }
        let g = self.ng(a);
        self.push(v, Op::Relu(a), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::tanh);
        let g = self.ng(a);
        self.push(v, Op::Tanh(a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + libm::exp(-x)));
        let g = self.ng(a);
        self.push(v, Op::Sigmoid(a), g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::exp);
        let g = self.ng(a);
        self.push(v, Op::Exp(a), g)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let g = self.ng(a);
        self.push(v, Op::Square(a), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hcat(&mats);
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), g)
    }

    /// `out[r] = a[index[r]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[u32]>) -> Var {
        let v = self.value(a).select_rows(&index);
        let g = self.ng(a);
        self.push(v, Op::GatherRows(a, index), g)
    }

    /// Sums consecutive row blocks: `out[s] = sum(a[offsets[s]..offsets[s + 1]])`.
    pub fn segment_sum(&mut self, a: Var, offsets: Arc<[usize]>) -> Var {
        let x = self.value(a);
        assert_eq!(*offsets.last().unwrap_or(&0), x.rows(), "segment offsets must cover all rows");
        let segs = offsets.len().saturating_sub(1);
        let mut v = Matrix::zeros(segs, x.cols());
        for s in 0..segs {
            for r in offsets[s]..offsets[s + 1] {
                let src = x.row(r);
                for (o, &y) in v.row_mut(s).iter_mut().zip(src) {
                    *o += y;
                }
            }
        }
        let g = self.ng(a);
        self.push(v, Op::SegmentSum(a, offsets), g)
    }

    /// `out[i] = sum over neighbours j of a[j]`.
    pub fn neighbor_sum(&mut self, a: Var, adj: Arc<SparseAdjacency>) -> Var {
        let v = neighbor_sum(&adj, self.value(a));
        let g = self.ng(a);
        self.push(v, Op::NeighborSum(a, adj), g)
    }

    /// Sums per-edge rows of `w` over each node's incident edges, optionally
    /// weighting every entry by `vals[neighbour]`.
    pub fn edge_sum(&mut self, w: Var, adj: Arc<SparseAdjacency>, vals: Option<Arc<[f64]>>) -> Var {
        let wm = self.value(w);
        assert_eq!(wm.rows(), adj.num_edges(), "edge_sum expects one row per edge");
        let mut v = Matrix::zeros(adj.num_nodes(), wm.cols());
        for i in 0..adj.num_nodes() {
            let out = v.row_mut(i);
            for (&t, &e) in adj.neighbors(i).iter().zip(adj.neighbor_edges(i)) {
                let f = vals.as_ref().map_or(1.0, |x| x[t as usize]);
                if f == 0.0 {
                    continue;
                }
                for (o, &y) in out.iter_mut().zip(wm.row(e as usize)) {
                    *o += f * y;
                }
            }
        }
        let g = self.ng(w);
        self.push(v, Op::EdgeSum { w, adj, vals }, g)
    }

    /// Per channel, the average of `vals` over each node's neighbours weighted by
    /// `exp(-(h[i] - h[j])^2)`. Isolated nodes give zero.
    pub fn similarity_ratio(&mut self, h: Var, adj: Arc<SparseAdjacency>, vals: Arc<[f64]>) -> Var {
        let hm = self.value(h);
        let c = hm.cols();
        let mut v = Matrix::zeros(adj.num_nodes(), c);
        let mut bits = Vec::new();
        let mut num = vec![0.0; c];
        let mut den = vec![0.0; c];
        for i in 0..adj.num_nodes() {
            if adj.degree(i) == 0 {
                continue;
            }
            num.iter_mut().for_each(|x| *x = 0.0);
            den.iter_mut().for_each(|x| *x = 0.0);
            let hi = hm.row(i);
            for &j in adj.neighbors(i) {
                let hj = hm.row(j as usize);
                let xj = vals[j as usize];
                for k in 0..c {
                    let d = hi[k] - hj[k];
                    let s = libm::exp(-d * d);
                    num[k] += s * xj;
                    den[k] += s;
                }
            }
            let out = v.row_mut(i);
            for k in 0..c {
                let ok = den[k].abs() >= SAFE_DIV_EPS;
                bits.push(ok);
                out[k] = if ok { num[k] / den[k] } else { 0.0 };
            }
        }
        for b in bits {
            self.mix(b);
        }
        let g = self.ng(h);
        self.push(v, Op::SimilarityRatio { h, adj, vals }, g)
    }

    /// Elementwise `a / b`, zero wherever `|b| < SAFE_DIV_EPS`.
    pub fn safe_div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| if y.abs() < SAFE_DIV_EPS { 0.0 } else { x / y });
        let bits: Vec<bool> = self.value(b).as_slice().iter().map(|&y| y.abs() >= SAFE_DIV_EPS).collect();
        for b in bits {
            self.mix(b);
        }
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::SafeDiv(a, b), g)
    }

    /// Subtracts each column's mean.
    pub fn center_cols(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mean = column_means(x);
        let mut v = x.clone();
        for r in 0..v.rows() {
            for (y, m) in v.row_mut(r).iter_mut().zip(&mean) {
                *y -= m;
            }
        }
        let g = self.ng(a);
        self.push(v, Op::CenterCols(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        let g = self.ng(a);
        self.push(v, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = (x.rows() * x.cols()).max(1) as f64;
        let v = Matrix::scalar(x.sum() / n);
        let g = self.ng(a);
        self.push(v, Op::Mean(a), g)
    }

    /// Training-mode batch normalisation over rows, with learnable `1 x c`
    /// scale and shift.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, BatchStats) {
        let xm = self.value(x);
        let (n, c) = xm.shape();
        let mean = column_means(xm);
        let mut var = vec![0.0; c];
        for r in 0..n {
            for (k, &y) in xm.row(r).iter().enumerate() {
                let d = y - mean[k];
                var[k] += d * d;
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / n.max(1) as f64).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| if n > 1 { v / (n - 1) as f64 } else { 0.0 }).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let mut xhat = Matrix::zeros(n, c);
        for r in 0..n {
            for k in 0..c {
                xhat.set(r, k, (xm.get(r, k) - mean[k]) * inv_std[k]);
            }
        }
        let (gm, bm) = (self.value(gamma).as_slice(), self.value(beta).as_slice());
        let mut out = Matrix::zeros(n, c);
        for r in 0..n {
            for k in 0..c {
                out.set(r, k, xhat.get(r, k) * gm[k] + bm[k]);
            }
        }
        let g = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let stats = BatchStats { mean, var: unbiased, biased_var: biased };
        (self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std }, g), stats)
    }

    /// Evaluation-mode batch normalisation with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Var {
        let xm = self.value(x);
        let (n, c) = xm.shape();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let (gm, bm) = (self.value(gamma).as_slice(), self.value(beta).as_slice());
        let mut out = Matrix::zeros(n, c);
        for r in 0..n {
            for k in 0..c {
                out.set(r, k, (xm.get(r, k) - mean[k]) * inv_std[k] * gm[k] + bm[k]);
            }
        }
        let g = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(out, Op::ColAffine { x, gamma, beta, mean: mean.to_vec(), inv_std }, g)
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(NumericError::NotScalar { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, d: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Linear(x, w, b) => {
                if self.ng(*x) {
                    acc(*x, g.matmul_t(self.value(*w)));
                }
                if self.ng(*w) {
                    acc(*w, self.value(*x).t_matmul(g));
                }
                if self.ng(*b) {
                    acc(*b, g.column_sums());
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    acc(*row, g.column_sums());
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::ScaleRows(a, s) => {
                let mut d = g.clone();
                for (r, &f) in s.iter().enumerate() {
                    for x in d.row_mut(r) {
                        *x *= f;
                    }
                }
                acc(*a, d);
            }
            Op::Relu(a) => acc(*a, g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, t| x * (1.0 - t * t))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |x, s| x * s * (1.0 - s))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, e| x * e)),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |x, y| 2.0 * x * y)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        acc(p, d);
                    }
                    offset += pc;
                }
            }
            Op::GatherRows(a, index) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for (r, &i) in index.iter().enumerate() {
                    for (o, &y) in d.row_mut(i as usize).iter_mut().zip(g.row(r)) {
                        *o += y;
                    }
                }
                acc(*a, d);
            }
            Op::SegmentSum(a, offsets) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for s in 0..offsets.len() - 1 {
                    for r in offsets[s]..offsets[s + 1] {
                        d.row_mut(r).copy_from_slice(g.row(s));
                    }
                }
                acc(*a, d);
            }
            Op::NeighborSum(a, adj) => acc(*a, neighbor_sum(adj, g)),
            Op::EdgeSum { w, adj, vals } => {
                let wm = self.value(*w);
                let mut d = Matrix::zeros(wm.rows(), wm.cols());
                for i in 0..adj.num_nodes() {
                    let gi = g.row(i);
                    for (&t, &e) in adj.neighbors(i).iter().zip(adj.neighbor_edges(i)) {
                        let f = vals.as_ref().map_or(1.0, |x| x[t as usize]);
                        if f == 0.0 {
                            continue;
                        }
                        for (o, &y) in d.row_mut(e as usize).iter_mut().zip(gi) {
                            *o += f * y;
                        }
                    }
                }
                acc(*w, d);
            }
            Op::SimilarityRatio { h, adj, vals } => {
                let hm = self.value(*h);
                let c = hm.cols();
                let mut d = Matrix::zeros(hm.rows(), c);
                let mut den = vec![0.0; c];
                for i in 0..adj.num_nodes() {
                    if adj.degree(i) == 0 {
                        continue;
                    }
                    den.iter_mut().for_each(|x| *x = 0.0);
                    let hi = hm.row(i);
                    for &j in adj.neighbors(i) {
                        let hj = hm.row(j as usize);
                        for k in 0..c {
                            let t = hi[k] - hj[k];
                            den[k] += libm::exp(-t * t);
                        }
                    }
                    let r = node.value.row(i);
                    let gi = g.row(i);
                    for &j in adj.neighbors(i) {
                        let j = j as usize;
                        let xj = vals[j];
                        for k in 0..c {
                            if den[k].abs() < SAFE_DIV_EPS || gi[k] == 0.0 {
                                continue;
                            }
                            let t = hm.get(i, k) - hm.get(j, k);
                            let s = libm::exp(-t * t);
                            let q = gi[k] * (xj - r[k]) / den[k] * s * (-2.0 * t);
                            let di = d.get(i, k);
                            d.set(i, k, di + q);
                            let dj = d.get(j, k);
                            d.set(j, k, dj - q);
                        }
                    }
                }
                acc(*h, d);
            }
            Op::SafeDiv(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, g.zip_map(bm, |x, y| if y.abs() < SAFE_DIV_EPS { 0.0 } else { x / y }));
                }
                if self.ng(*b) {
                    let mut d = Matrix::zeros(bm.rows(), bm.cols());
                    for (k, o) in d.as_mut_slice().iter_mut().enumerate() {
                        let y = bm.as_slice()[k];
                        if y.abs() >= SAFE_DIV_EPS {
                            *o = -g.as_slice()[k] * am.as_slice()[k] / (y * y);
                        }
                    }
                    acc(*b, d);
                }
            }
            Op::CenterCols(a) => {
                let mean = column_means(g);
                let mut d = g.clone();
                for r in 0..d.rows() {
                    for (y, m) in d.row_mut(r).iter_mut().zip(&mean) {
                        *y -= m;
                    }
                }
                acc(*a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let n = (r * c).max(1) as f64;
                acc(*a, Matrix::filled(r, c, g.get(0, 0) / n));
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, c) = xhat.shape();
                let gm = self.value(*gamma).as_slice();
                let mut dgamma = Matrix::zeros(1, c);
                let mut dbeta = Matrix::zeros(1, c);
                let mut sum_dxhat = vec![0.0; c];
                let mut sum_dxhat_xhat = vec![0.0; c];
                for r in 0..n {
                    for k in 0..c {
                        let gk = g.get(r, k);
                        let xh = xhat.get(r, k);
                        dgamma.as_mut_slice()[k] += gk * xh;
                        dbeta.as_mut_slice()[k] += gk;
                        let dxh = gk * gm[k];
                        sum_dxhat[k] += dxh;
                        sum_dxhat_xhat[k] += dxh * xh;
                    }
                }
                if self.ng(*x) {
                    let nf = n as f64;
                    let mut dx = Matrix::zeros(n, c);
                    for r in 0..n {
                        for k in 0..c {
                            let dxh = g.get(r, k) * gm[k];
                            let v = inv_std[k] / nf * (nf * dxh - sum_dxhat[k] - xhat.get(r, k) * sum_dxhat_xhat[k]);
                            dx.set(r, k, v);
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::ColAffine { x, gamma, beta, mean, inv_std } => {
                let xm = self.value(*x);
                let (n, c) = xm.shape();
                let gm = self.value(*gamma).as_slice();
                let mut dx = Matrix::zeros(n, c);
                let mut dgamma = Matrix::zeros(1, c);
                let mut dbeta = Matrix::zeros(1, c);
                for r in 0..n {
                    for k in 0..c {
                        let gk = g.get(r, k);
                        dx.set(r, k, gk * inv_std[k] * gm[k]);
                        dgamma.as_mut_slice()[k] += gk * (xm.get(r, k) - mean[k]) * inv_std[k];
                        dbeta.as_mut_slice()[k] += gk;
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
        }
    }
}

fn column_means(x: &Matrix) -> Vec<f64> {
    let n = x.rows().max(1) as f64;
    x.column_sums().as_slice().iter().map(|s| s / n).collect()
}

fn neighbor_sum(adj: &SparseAdjacency, a: &Matrix) -> Matrix {
    assert_eq!(a.rows(), adj.num_nodes(), "neighbor_sum expects one row per node");
    let mut v = Matrix::zeros(a.rows(), a.cols());
    for i in 0..adj.num_nodes() {
        for &j in adj.neighbors(i) {
            let src = a.row(j as usize);
            for (o, &y) in v.row_mut(i).iter_mut().zip(src) {
                *o += y;
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::boxed::Box;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    type Build = dyn Fn(&mut Tape, Var) -> Var;

    /// Central differences on every entry of the input, compared with the tape.
    fn check(input: Matrix, build: Box<Build>) {
        let mut tape = Tape::new();
        let x = tape.param(input.clone());
        let out = build(&mut tape, x);
        let sig = tape.kink_signature();
        let grads = tape.backward(out).unwrap().get(x);
        for k in 0..input.as_slice().len() {
            let mut h = 1e-5;
            let numeric = loop {
                let eval = |delta: f64| {
                    let mut m = input.clone();
                    m.as_mut_slice()[k] += delta;
                    let mut t = Tape::new();
                    let x = t.param(m);
                    let o = build(&mut t, x);
                    (t.value(o).get(0, 0), t.kink_signature())
                };
                let (fp, sp) = eval(h);
                let (fm, sm) = eval(-h);
                if (sp == sig && sm == sig) || h < 1e-10 {
                    break (fp - fm) / (2.0 * h);
                }
                h /= 10.0;
            };
            let analytic = grads.as_slice()[k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!((analytic - numeric).abs() / denom < 1e-5, "entry {k}: analytic {analytic} numeric {numeric}");
        }
    }

    fn adj() -> Arc<SparseAdjacency> {
        Arc::new(SparseAdjacency::from_edges(5, &[(0, 1), (0, 2), (1, 2), (2, 3)]).unwrap())
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(3, 4, &mut rng);
        let b = random(1, 4, &mut rng);
        check(
            random(5, 3, &mut rng),
            Box::new(move |t, x| {
                let w = t.constant(w.clone());
                let b = t.constant(b.clone());
                let h = t.matmul(x, w);
                let h = t.add_row(h, b);
                let r = t.relu(h);
                let th = t.tanh(h);
                let e = t.exp(th);
                let m = t.mul(r, e);
                let s = t.square(m);
                let c = t.center_cols(s);
                let c = t.sub(c, th);
                let sg = t.sigmoid(h);
                let c = t.add(c, sg);
                let c = t.scale(c, 0.7);
                let q = t.square(c);
                t.mean(q)
            }),
        );
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = adj();
        let offsets: Arc<[usize]> = a.offsets().to_vec().into();
        let targets: Arc<[u32]> = a.targets().to_vec().into();
        let scale: Arc<[f64]> = a.inv_sqrt_degree().into();
        check(
            random(5, 2, &mut rng),
            Box::new(move |t, x| {
                let g = t.gather_rows(x, targets.clone());
                let s = t.segment_sum(g, offsets.clone());
                let s = t.scale_rows(s, scale.clone());
                let n = t.neighbor_sum(x, a.clone());
                let c = t.concat_cols(&[s, n, x]);
                let q = t.square(c);
                t.sum(q)
            }),
        );
    }

    #[test]
    fn exposure_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = adj();
        let treated: Arc<[f64]> = vec![1.0, 0.0, 1.0, 1.0, 0.0].into();
        let w_edges = random(4, 3, &mut rng).map(|x| x.abs() + 0.1);
        check(
            random(5, 3, &mut rng),
            Box::new(move |t, x| {
                let sim = t.similarity_ratio(x, a.clone(), treated.clone());
                let pos = t.square(x);
                let treated_pos = t.scale_rows(pos, treated.clone());
                let num = t.neighbor_sum(treated_pos, a.clone());
                let den = t.neighbor_sum(pos, a.clone());
                let frac = t.safe_div(num, den);
                let w = t.constant(w_edges.clone());
                // The first three node rows double as a 3x3 weight for the 4 edges.
                let head: Arc<[u32]> = vec![0, 1, 2].into();
                let block = t.gather_rows(x, head);
                let ew = t.matmul(w, block);
                let ew = t.square(ew);
                let en = t.edge_sum(ew, a.clone(), Some(treated.clone()));
                let ed = t.edge_sum(ew, a.clone(), None);
                let er = t.safe_div(en, ed);
                let all = t.concat_cols(&[sim, frac, er]);
                let q = t.square(all);
                t.sum(q)
            }),
        );
    }

    #[test]
    fn linear_op_in_every_role() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, w, b) = (random(5, 3, &mut rng), random(3, 4, &mut rng), random(1, 4, &mut rng));
        let (w1, b1) = (w.clone(), b.clone());
        check(
            x.clone(),
            Box::new(move |t, v| {
                let (w, b) = (t.constant(w1.clone()), t.constant(b1.clone()));
                let h = t.linear(v, w, b);
                let h = t.tanh(h);
                t.sum(h)
            }),
        );
        let (x2, b2) = (x.clone(), b.clone());
        check(
            w.clone(),
            Box::new(move |t, v| {
                let (x, b) = (t.constant(x2.clone()), t.constant(b2.clone()));
                let h = t.linear(x, v, b);
                let h = t.square(h);
                t.mean(h)
            }),
        );
        check(
            b,
            Box::new(move |t, v| {
                let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
                let h = t.linear(x, w, v);
                let h = t.tanh(h);
                let h = t.square(h);
                t.sum(h)
            }),
        );
    }

    #[test]
    fn batch_norm_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gamma = random(1, 3, &mut rng);
        let beta = random(1, 3, &mut rng);
        let (g2, b2) = (gamma.clone(), beta.clone());
        check(
            random(6, 3, &mut rng),
            Box::new(move |t, x| {
                let g = t.constant(g2.clone());
                let b = t.constant(b2.clone());
                let (y, _) = t.batch_norm(x, g, b, 1e-5);
                let y = t.tanh(y);
                let w = t.constant(Matrix::from_vec(6, 3, (0..18).map(|i| (i as f64).sin()).collect()));
                let p = t.mul(y, w);
                t.sum(p)
            }),
        );
        check(
            random(6, 3, &mut rng),
            Box::new(move |t, x| {
                let g = t.constant(gamma.clone());
                let b = t.constant(beta.clone());
                let y = t.batch_norm_eval(x, g, b, &[0.1, -0.2, 0.3], &[1.5, 0.5, 2.0], 1e-5);
                let q = t.square(y);
                t.sum(q)
            }),
        );
    }

    #[test]
    fn batch_norm_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(7, 2, &mut rng);
        check(
            random(1, 2, &mut rng),
            Box::new(move |t, gamma| {
                let xv = t.constant(x.clone());
                let beta = t.square(gamma);
                let (y, _) = t.batch_norm(xv, gamma, beta, 1e-5);
                let q = t.square(y);
                let q = t.tanh(q);
                t.sum(q)
            }),
        );
    }

    #[test]
    fn batch_norm_normalises() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(200, 4, &mut rng).map(|v| 5.0 * v + 2.0);
        let mut t = Tape::new();
        let xv = t.constant(x);
        let g = t.constant(Matrix::filled(1, 4, 1.0));
        let b = t.constant(Matrix::zeros(1, 4));
        let (y, _) = t.batch_norm(xv, g, b, 1e-5);
        let y = t.value(y);
        for k in 0..4 {
            let col: Vec<f64> = (0..200).map(|r| y.get(r, k)).collect();
            let mean = col.iter().sum::<f64>() / 200.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 200.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn safe_div_zero_denominator() {
        let mut t = Tape::new();
        let a = t.param(Matrix::column(&[1.0, 2.0]));
        let b = t.param(Matrix::column(&[0.0, 4.0]));
        let q = t.safe_div(a, b);
        assert_eq!(t.value(q).as_slice(), &[0.0, 0.5]);
        let s = t.sum(q);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).as_slice(), &[0.0, 0.25]);
        assert_eq!(g.get(b).as_slice(), &[0.0, -2.0 / 16.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(2, 2));
        assert_eq!(t.backward(a).err(), Some(NumericError::NotScalar { rows: 2, cols: 2 }));
    }

    #[test]
    fn untouched_params_get_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(Matrix::scalar(3.0));
        let b = t.param(Matrix::zeros(2, 3));
        let s = t.square(a);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).as_slice(), &[6.0]);
        assert_eq!(g.get(b), Matrix::zeros(2, 3));
    }
}
