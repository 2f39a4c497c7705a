//! Tape-style reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! addressed by [`Var`] handles. Calling [`Graph::backward`] on a scalar
//! node walks the tape in reverse and accumulates `∂root/∂leaf` into every
//! leaf created with [`Graph::param`]. The graph is dropped after use; no
//! state survives between forward passes.
//!
//! Only first-order derivatives are propagated. Losses that depend on
//! gradients (see `invariance::classifier_gradient`) build those gradients
//! as explicit expressions so that first-order differentiation of the
//! expression yields the required second-order terms.

use crate::error::{contract, Error, Result};

use super::dense::{dot, norm, softmax_in_place, Tensor};

/// Handle to a node on a [`Graph`].
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
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    SoftmaxRows(Var),
    CrossEntropyRows {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    Sum(Var),
    Mean(Var),
    SliceRows(Var, usize),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    RowOuter(Var, Var),
    RowNorm(Var),
    RowCosineDistance(Var, Var),
    CosineDistanceMatrix(Var, Var),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, present after a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        contract!(sa == sb, "{what}: shape mismatch {sa:?} vs {sb:?}");
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`; with `b` stored as `out × in` this is the affine-layer product.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    /// Adds a `1 × C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        contract!(
            tr.rows() == 1 && tr.cols() == ta.cols(),
            "add_row: row {:?} does not broadcast over {:?}",
            tr.shape(),
            ta.shape()
        );
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_slice_mut(r).iter_mut().zip(tr.as_slice()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, rg, Op::AddRow(a, row)))
    }

    /// `x · W^T + b` for `W: out × in`, `b: 1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul_t(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::SoftmaxRows(a))
    }

    /// Per-row `−log softmax(logits_r)[labels_r]`, as a `B × 1` column.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        contract!(
            labels.len() == t.rows(),
            "cross_entropy_rows: {} labels for {} rows",
            labels.len(),
            t.rows()
        );
        let mut out = Tensor::zeros(t.rows(), 1);
        let mut probs = t.clone();
        for (r, &y) in labels.iter().enumerate() {
            if y >= t.cols() {
                return Err(Error::Index {
                    index: y,
                    len: t.cols(),
                });
            }
            let row = t.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out[(r, 0)] = lse - row[y];
            softmax_in_place(probs.row_slice_mut(r));
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            rg,
            Op::CrossEntropyRows {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Scalar `−log softmax(logits)[label]` for a `1 × C` logit row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        contract!(
            self.value(logits).rows() == 1,
            "softmax_cross_entropy expects a single row of logits"
        );
        self.cross_entropy_rows(logits, &[label])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::Mean(a))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        contract!(
            start <= end && end <= t.rows(),
            "slice_rows {start}..{end} out of range for {} rows",
            t.rows()
        );
        let data = t.as_slice()[start * t.cols()..end * t.cols()].to_vec();
        let out = Tensor::from_vec(end - start, t.cols(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, rg, Op::SliceRows(a, start)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        contract!(
            ta.rows() == tb.rows(),
            "concat_cols: row mismatch {} vs {}",
            ta.rows(),
            tb.rows()
        );
        let mut out = Tensor::zeros(ta.rows(), ta.cols() + tb.cols());
        for r in 0..ta.rows() {
            let row = out.row_slice_mut(r);
            row[..ta.cols()].copy_from_slice(ta.row_slice(r));
            row[ta.cols()..].copy_from_slice(tb.row_slice(r));
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::ConcatCols(a, b)))
    }

    /// Row lookup into an embedding table.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut out = Tensor::zeros(idx.len(), t.cols());
        for (r, &i) in idx.iter().enumerate() {
            if i >= t.rows() {
                return Err(Error::Index {
                    index: i,
                    len: t.rows(),
                });
            }
            out.row_slice_mut(r).copy_from_slice(t.row_slice(i));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(out, rg, Op::GatherRows(table, idx.to_vec())))
    }

    /// Per-row outer product flattened row-major:
    /// `out[r, c·H + h] = a[r, c] · b[r, h]` for `a: B × C`, `b: B × H`.
    pub fn row_outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        contract!(
            ta.rows() == tb.rows(),
            "row_outer: row mismatch {} vs {}",
            ta.rows(),
            tb.rows()
        );
        let (c, h) = (ta.cols(), tb.cols());
        let mut out = Tensor::zeros(ta.rows(), c * h);
        for r in 0..ta.rows() {
            let br = tb.row_slice(r);
            let orow = out.row_slice_mut(r);
            for (ci, &av) in ta.row_slice(r).iter().enumerate() {
                for (o, &bv) in orow[ci * h..(ci + 1) * h].iter_mut().zip(br) {
                    *o = av * bv;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::RowOuter(a, b)))
    }

    /// Euclidean norm of each row, as a `B × 1` column.
    ///
    /// The subgradient at a zero row is the zero vector, so identical
    /// inputs upstream of a difference yield exactly zero and finite gradients.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows(), 1);
        for r in 0..t.rows() {
            out[(r, 0)] = norm(t.row_slice(r));
        }
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::RowNorm(a))
    }

    /// `1 − cos(a_r, b_r)` for each aligned row pair, as a `B × 1` column.
    ///
    /// Two zero rows give 0; exactly one zero row gives 1. Both cases carry a
    /// zero gradient.
    pub fn row_cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_cosine_distance")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(ta.rows(), 1);
        for r in 0..ta.rows() {
            let (x, y) = (ta.row_slice(r), tb.row_slice(r));
            let (nx, ny) = (norm(x), norm(y));
            out[(r, 0)] = match (nx == 0.0, ny == 0.0) {
                (true, true) => 0.0,
                (true, false) | (false, true) => 1.0,
                _ => 1.0 - dot(x, y) / (nx * ny),
            };
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::RowCosineDistance(a, b)))
    }

    /// Pairwise cosine distance `out[i, j] = 1 − cos(a_i, c_j)` for
    /// `a: B × E`, `c: P × E`. Zero-norm rows are rejected.
    pub fn cosine_distance_matrix(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(c));
        contract!(
            ta.cols() == tc.cols(),
            "cosine_distance_matrix: width mismatch {} vs {}",
            ta.cols(),
            tc.cols()
        );
        let na = row_norms(ta, "left")?;
        let nc = row_norms(tc, "right")?;
        let mut out = Tensor::zeros(ta.rows(), tc.rows());
        for i in 0..ta.rows() {
            for j in 0..tc.rows() {
                let cos = dot(ta.row_slice(i), tc.row_slice(j)) / (na[i] * nc[j]);
                out[(i, j)] = 1.0 - cos;
            }
        }
        let rg = self.rg(&[a, c]);
        Ok(self.push(out, rg, Op::CosineDistanceMatrix(a, c)))
    }

    /// Scalar `1 − (u·v)/(‖u‖‖v‖)` for two `1 × n` vectors.
    pub fn cosine_distance(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        contract!(
            tu.rows() == 1 && tv.rows() == 1 && tu.cols() == tv.cols(),
            "cosine_distance expects two equal-length row vectors, got {:?} and {:?}",
            tu.shape(),
            tv.shape()
        );
        self.cosine_distance_matrix(u, v)
    }

    /// Populates gradients of the scalar `root` on every reachable leaf
    /// created with [`Graph::param`]. Repeated calls accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        contract!(
            self.value(root).shape() == (1, 1),
            "backward root must be scalar, got {:?}",
            self.value(root).shape()
        );
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, t: Tensor| {
            if self.nodes[v.0].requires_grad {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    send(*a, g.matmul_t(val(*b))?);
                }
                if wants(*b) {
                    send(*b, val(*a).t_matmul(g)?);
                }
            }
            Op::MatMulT(a, b) => {
                if wants(*a) {
                    send(*a, g.matmul(val(*b))?);
                }
                if wants(*b) {
                    send(*b, g.t_matmul(val(*a))?);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    send(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if wants(*row) {
                    let mut acc = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in acc.as_mut_slice().iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                    send(*row, acc);
                }
            }
            Op::Scale(a, c) => send(*a, g.map(|x| x * c)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Relu(a) => send(
                *a,
                g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 }),
            ),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut out = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let s = dot(yr, gr);
                    for (o, (yv, gv)) in out.row_slice_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - s);
                    }
                }
                send(*a, out);
            }
            Op::CrossEntropyRows {
                logits,
                labels,
                probs,
            } => {
                let mut out = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    out[(r, y)] -= 1.0;
                    let gr = g[(r, 0)];
                    for o in out.row_slice_mut(r) {
                        *o *= gr;
                    }
                }
                send(*logits, out);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::filled(r, c, g.as_slice()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                send(*a, Tensor::filled(r, c, g.as_slice()[0] / (r * c) as f64));
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).shape();
                let mut out = Tensor::zeros(r, c);
                out.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
                send(*a, out);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let mut ga = Tensor::zeros(g.rows(), ca);
                let mut gb = Tensor::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[..ca]);
                    gb.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[ca..]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::GatherRows(table, idx) => {
                let (r, c) = val(*table).shape();
                let mut out = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, x) in out.row_slice_mut(i).iter_mut().zip(g.row_slice(k)) {
                        *o += x;
                    }
                }
                send(*table, out);
            }
            Op::RowOuter(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let h = tb.cols();
                if wants(*a) {
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..ta.rows() {
                        let (gr, br) = (g.row_slice(r), tb.row_slice(r));
                        for ci in 0..ta.cols() {
                            ga[(r, ci)] = dot(&gr[ci * h..(ci + 1) * h], br);
                        }
                    }
                    send(*a, ga);
                }
                if wants(*b) {
                    let mut gb = Tensor::zeros(tb.rows(), h);
                    for r in 0..tb.rows() {
                        let gr = g.row_slice(r);
                        let out = gb.row_slice_mut(r);
                        for (ci, &av) in ta.row_slice(r).iter().enumerate() {
                            for (o, &gv) in out.iter_mut().zip(&gr[ci * h..(ci + 1) * h]) {
                                *o += av * gv;
                            }
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::RowNorm(a) => {
                let ta = val(*a);
                let mut out = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..ta.rows() {
                    let n = node.value[(r, 0)];
                    if n > 0.0 {
                        let s = g[(r, 0)] / n;
                        for (o, x) in out.row_slice_mut(r).iter_mut().zip(ta.row_slice(r)) {
                            *o = s * x;
                        }
                    }
                }
                send(*a, out);
            }
            Op::RowCosineDistance(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                for r in 0..ta.rows() {
                    let (x, y) = (ta.row_slice(r), tb.row_slice(r));
                    let (nx, ny) = (norm(x), norm(y));
                    if nx == 0.0 || ny == 0.0 {
                        continue;
                    }
                    let cos = dot(x, y) / (nx * ny);
                    let gr = g[(r, 0)];
                    // ∂(1 − cos)/∂x = −(ŷ − cos·x̂)/‖x‖
                    for k in 0..x.len() {
                        let (xh, yh) = (x[k] / nx, y[k] / ny);
                        ga[(r, k)] = -gr * (yh - cos * xh) / nx;
                        gb[(r, k)] = -gr * (xh - cos * yh) / ny;
                    }
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::CosineDistanceMatrix(a, c) => {
                let (ta, tc) = (val(*a), val(*c));
                let na: Vec<f64> = (0..ta.rows()).map(|i| norm(ta.row_slice(i))).collect();
                let nc: Vec<f64> = (0..tc.rows()).map(|j| norm(tc.row_slice(j))).collect();
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                let mut gc = Tensor::zeros(tc.rows(), tc.cols());
                for i in 0..ta.rows() {
                    let x = ta.row_slice(i);
                    for j in 0..tc.rows() {
                        let y = tc.row_slice(j);
                        let gij = g[(i, j)];
                        if gij == 0.0 {
                            continue;
                        }
                        let cos = 1.0 - node.value[(i, j)];
                        for k in 0..x.len() {
                            let (xh, yh) = (x[k] / na[i], y[k] / nc[j]);
                            ga[(i, k)] -= gij * (yh - cos * xh) / na[i];
                            gc[(j, k)] -= gij * (xh - cos * yh) / nc[j];
                        }
                    }
                }
                send(*a, ga);
                send(*c, gc);
            }
        }
        Ok(())
    }
}

fn row_norms(t: &Tensor, side: &str) -> Result<Vec<f64>> {
    (0..t.rows())
        .map(|r| {
            let n = norm(t.row_slice(r));
            if n == 0.0 {
                Err(Error::Degenerate(format!(
                    "zero-norm {side} row {r} in cosine distance"
                )))
            } else {
                Ok(n)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &Graph, v: Var) -> f64 {
        g.value(v).item().unwrap()
    }

    #[test]
    fn cosine_distance_reference_values() {
        let mut g = Graph::new();
        let e1 = g.constant(Tensor::row(&[1.0, 0.0]));
        let e2 = g.constant(Tensor::row(&[0.0, 1.0]));
        let neg = g.constant(Tensor::row(&[-1.0, 0.0]));
        let u = g.constant(Tensor::row(&[0.3, -2.0, 5.0]));
        let d = g.cosine_distance(e1, e2).unwrap();
        assert_eq!(scalar(&g, d), 1.0);
        let d = g.cosine_distance(e1, neg).unwrap();
        assert_eq!(scalar(&g, d), 2.0);
        let d = g.cosine_distance(u, u).unwrap();
        assert!(scalar(&g, d).abs() < 1e-15);
    }

    #[test]
    fn cosine_distance_rejects_zero_vector() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(&[0.0, 0.0]));
        let e = g.constant(Tensor::row(&[1.0, 0.0]));
        assert!(matches!(g.cosine_distance(z, e), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut g = Graph::new();
        let flat = g.constant(Tensor::row(&[0.0, 0.0]));
        let ce = g.softmax_cross_entropy(flat, 0).unwrap();
        assert!((scalar(&g, ce) - std::f64::consts::LN_2).abs() < 1e-15);

        let sat = g.constant(Tensor::row(&[30.0, 0.0]));
        let ce = g.softmax_cross_entropy(sat, 0).unwrap();
        assert!(scalar(&g, ce) <= 1e-12);

        assert!(matches!(
            g.softmax_cross_entropy(flat, 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn backward_quadratic() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[3.0]));
        let sq = g.mul(x, x).unwrap();
        let root = g.sum(sq);
        g.backward(root).unwrap();
        assert_eq!(g.grad(x).unwrap().as_slice(), &[6.0]);

        // second call accumulates
        g.backward(root).unwrap();
        assert_eq!(g.grad(x).unwrap().as_slice(), &[12.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_on_constant_populates_nothing() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::row(&[1.0, 2.0]));
        let p = g.param(Tensor::row(&[1.0]));
        let root = g.sum(c);
        g.backward(root).unwrap();
        assert!(g.grad(p).is_none());
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn row_norm_is_finite_at_zero() {
        let mut g = Graph::new();
        let a = g.param(Tensor::row(&[1.0, -2.0]));
        let b = g.param(Tensor::row(&[1.0, -2.0]));
        let d = g.sub(a, b).unwrap();
        let n = g.row_norm(d);
        let root = g.sum(n);
        assert_eq!(scalar(&g, root), 0.0);
        g.backward(root).unwrap();
        assert!(g.grad(a).unwrap().as_slice().iter().all(|x| x.is_finite()));
        assert_eq!(g.grad(a).unwrap().as_slice(), &[0.0, 0.0]);
    }
}
