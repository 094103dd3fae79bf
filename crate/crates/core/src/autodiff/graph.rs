use std::cell::Cell;

use super::{AutodiffError, Tensor};

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

/// Floating-point operations executed by graph primitives on this thread.
///
/// The counter is monotone; callers measure work as a difference of two
/// readings.
pub fn flop_count() -> u64 {
    FLOPS.with(Cell::get)
}

fn charge(flops: usize) {
    FLOPS.with(|c| c.set(c.get().wrapping_add(flops as u64)));
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    /// `n x m` matrix plus a length-`m` row vector added to every row.
    AddRow(Var, Var),
    /// `n x m` -> `m`, summing down each column.
    ColumnSums(Var),
    /// `n x m` -> `n`, summing along each row.
    RowSums(Var),
    /// `m` -> `n x m`, every row a copy of the input.
    RepeatRows(Var),
    /// `n` -> `n x m`, every column a copy of the input.
    RepeatCols(Var),
    Relu(Var),
    /// Upstream gradient masked by the sign of the second operand. Linear in
    /// the first operand, piecewise constant in the second.
    ReluMask(Var, Var),
    Sigmoid(Var),
    Exp(Var),
    LogSoftmax(Var),
    Sum(Var),
    Fill(Var),
}

impl Op {
    /// Parents through which a gradient flows.
    fn differentiable_parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddRow(a, b) => {
                vec![a, b]
            }
            Op::ReluMask(g, _) => vec![g],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::ColumnSums(a)
            | Op::RowSums(a)
            | Op::RepeatRows(a)
            | Op::RepeatCols(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Fill(a) => vec![a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run computation graph.
///
/// Every primitive evaluates eagerly and appends one node; a node's parents
/// always precede it, so the node list is a topological order. Gradients are
/// themselves built out of graph primitives (see [`Graph::grad`]), which is
/// what makes Hessian-vector products a second reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    if t.rank() != 2 {
        return Err(AutodiffError::RankMismatch {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        });
    }
    Ok((t.rows(), t.cols()))
}

fn require_vector(op: &'static str, t: &Tensor) -> Result<usize, AutodiffError> {
    if t.rank() != 1 {
        return Err(AutodiffError::RankMismatch {
            op,
            expected: 1,
            shape: t.shape().to_vec(),
        });
    }
    Ok(t.len())
}

fn stable_sigmoid(x: f64) -> f64 {
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Adds an input node (a parameter or a constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node created after `mark`.
    pub(crate) fn rewind(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        charge(out.len());
        self.push(name, out, op)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        charge(out.len());
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.map("scale", a, Op::Scale(a, c), |x| c * x)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = require_matrix("matmul", ta)?;
        let (k2, m) = require_matrix("matmul", tb)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * m..(p + 1) * m];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        charge(2 * n * k * m);
        let out = Tensor::new(&[n, m], out)?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let (n, m) = require_matrix("transpose", ta)?;
        let d = ta.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = d[i * m + j];
            }
        }
        charge(n * m);
        let out = Tensor::new(&[m, n], out)?;
        self.push("transpose", out, Op::Transpose(a))
    }

    /// Adds the vector `row` to every row of the matrix `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (n, m) = require_matrix("add_row", ta)?;
        let len = require_vector("add_row", tr)?;
        if len != m {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let r = tr.data();
        let data = ta
            .data()
            .chunks(m)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        charge(n * m);
        let out = Tensor::new(&[n, m], data)?;
        self.push("add_row", out, Op::AddRow(a, row))
    }

    pub fn column_sums(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let (n, m) = require_matrix("column_sums", ta)?;
        let mut out = vec![0.0; m];
        for chunk in ta.data().chunks(m) {
            for (o, x) in out.iter_mut().zip(chunk) {
                *o += x;
            }
        }
        charge(n * m);
        self.push("column_sums", Tensor::vector(out), Op::ColumnSums(a))
    }

    pub fn row_sums(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let (n, m) = require_matrix("row_sums", ta)?;
        let out = ta.data().chunks(m).map(|c| c.iter().sum()).collect();
        charge(n * m);
        self.push("row_sums", Tensor::vector(out), Op::RowSums(a))
    }

    pub fn repeat_rows(&mut self, v: Var, n: usize) -> Result<Var, AutodiffError> {
        let tv = self.value(v);
        let m = require_vector("repeat_rows", tv)?;
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            data.extend_from_slice(tv.data());
        }
        charge(n * m);
        let out = Tensor::new(&[n, m], data)?;
        self.push("repeat_rows", out, Op::RepeatRows(v))
    }

    pub fn repeat_cols(&mut self, v: Var, m: usize) -> Result<Var, AutodiffError> {
        let tv = self.value(v);
        let n = require_vector("repeat_cols", tv)?;
        let data = tv.data().iter().flat_map(|&x| std::iter::repeat_n(x, m)).collect();
        charge(n * m);
        let out = Tensor::new(&[n, m], data)?;
        self.push("repeat_cols", out, Op::RepeatCols(v))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map("relu", a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    fn relu_mask(&mut self, g: Var, x: Var) -> Result<Var, AutodiffError> {
        self.zip_with("relu_mask", g, x, Op::ReluMask(g, x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map("sigmoid", a, Op::Sigmoid(a), stable_sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.map("exp", a, Op::Exp(a), f64::exp)
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let (n, m) = require_matrix("log_softmax", ta)?;
        let mut out = Vec::with_capacity(n * m);
        for row in ta.data().chunks(m) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        charge(4 * n * m);
        let out = Tensor::new(&[n, m], out)?;
        self.push("log_softmax", out, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        let s = ta.data().iter().sum();
        charge(ta.len());
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn fill(&mut self, s: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "fill",
                lhs: ts.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::full(shape, ts.item());
        charge(out.len());
        self.push("fill", out, Op::Fill(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Squared Euclidean norm of all elements.
    pub fn sq_norm(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let sq = self.mul(a, a)?;
        self.sum(sq)
    }

    /// Sum of the elementwise product.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], target: Var, contribution: Var) -> Result<(), AutodiffError> {
        adj[target.0] = Some(match adj[target.0] {
            None => contribution,
            Some(prev) => self.add(prev, contribution)?,
        });
        Ok(())
    }

    /// Symbolic reverse sweep: appends nodes computing `d output / d w` for
    /// every `w` in `wrt` and returns handles to them.
    ///
    /// The returned gradients are ordinary graph nodes, so they can be
    /// differentiated again.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        let out_shape = self.value(output).shape().to_vec();
        if self.value(output).len() != 1 {
            return Err(AutodiffError::NonScalarOutput { shape: out_shape });
        }
        let end = output.0 + 1;
        let mut relevant = vec![false; end];
        for w in wrt {
            if w.0 < end {
                relevant[w.0] = true;
            }
        }
        for i in 0..end {
            if !relevant[i] {
                relevant[i] = self.nodes[i]
                    .op
                    .differentiable_parents()
                    .iter()
                    .any(|p| relevant[p.0]);
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; end];
        let seed = self.leaf(Tensor::full(&out_shape, 1.0));
        adj[output.0] = Some(seed);

        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            if !relevant[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let me = Var(i);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if relevant[a.0] {
                        self.accumulate(&mut adj, a, g)?;
                    }
                    if relevant[b.0] {
                        self.accumulate(&mut adj, b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if relevant[a.0] {
                        self.accumulate(&mut adj, a, g)?;
                    }
                    if relevant[b.0] {
                        let c = self.neg(g)?;
                        self.accumulate(&mut adj, b, c)?;
                    }
                }
                Op::Mul(a, b) => {
                    if relevant[a.0] {
                        let c = self.mul(g, b)?;
                        self.accumulate(&mut adj, a, c)?;
                    }
                    if relevant[b.0] {
                        let c = self.mul(g, a)?;
                        self.accumulate(&mut adj, b, c)?;
                    }
                }
                Op::Scale(a, k) => {
                    let c = self.scale(g, k)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::MatMul(a, b) => {
                    if relevant[a.0] {
                        let bt = self.transpose(b)?;
                        let c = self.matmul(g, bt)?;
                        self.accumulate(&mut adj, a, c)?;
                    }
                    if relevant[b.0] {
                        let at = self.transpose(a)?;
                        let c = self.matmul(at, g)?;
                        self.accumulate(&mut adj, b, c)?;
                    }
                }
                Op::Transpose(a) => {
                    let c = self.transpose(g)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::AddRow(a, r) => {
                    if relevant[a.0] {
                        self.accumulate(&mut adj, a, g)?;
                    }
                    if relevant[r.0] {
                        let c = self.column_sums(g)?;
                        self.accumulate(&mut adj, r, c)?;
                    }
                }
                Op::ColumnSums(a) => {
                    let n = self.value(a).rows();
                    let c = self.repeat_rows(g, n)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::RowSums(a) => {
                    let m = self.value(a).cols();
                    let c = self.repeat_cols(g, m)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::RepeatRows(v) => {
                    let c = self.column_sums(g)?;
                    self.accumulate(&mut adj, v, c)?;
                }
                Op::RepeatCols(v) => {
                    let c = self.row_sums(g)?;
                    self.accumulate(&mut adj, v, c)?;
                }
                Op::Relu(a) => {
                    let c = self.relu_mask(g, a)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::ReluMask(up, x) => {
                    let c = self.relu_mask(g, x)?;
                    self.accumulate(&mut adj, up, c)?;
                }
                Op::Sigmoid(a) => {
                    // s' = s - s^2
                    let sq = self.mul(me, me)?;
                    let d = self.sub(me, sq)?;
                    let c = self.mul(g, d)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::Exp(a) => {
                    let c = self.mul(g, me)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::LogSoftmax(a) => {
                    // g - softmax * rowsum(g)
                    let m = self.value(a).cols();
                    let p = self.exp(me)?;
                    let rs = self.row_sums(g)?;
                    let rs = self.repeat_cols(rs, m)?;
                    let pr = self.mul(p, rs)?;
                    let c = self.sub(g, pr)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::Sum(a) => {
                    let shape = self.value(a).shape().to_vec();
                    let c = self.fill(g, &shape)?;
                    self.accumulate(&mut adj, a, c)?;
                }
                Op::Fill(s) => {
                    let shape = self.value(s).shape().to_vec();
                    let total = self.sum(g)?;
                    // keep the operand's own shape (scalar or length-1)
                    let c = self.fill(total, &shape)?;
                    self.accumulate(&mut adj, s, c)?;
                }
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for w in wrt {
            let g = match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.value(*w).shape().to_vec();
                    self.leaf(Tensor::zeros(&shape))
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    /// Numeric gradients of a scalar output with respect to `wrt`.
    ///
    /// Nodes created by the reverse sweep are discarded afterwards, so the
    /// graph is left exactly as it was.
    pub fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>, AutodiffError> {
        let mark = self.mark();
        let result = self
            .grad(output, wrt)
            .map(|gs| gs.iter().map(|&g| self.value(g).clone()).collect());
        self.rewind(mark);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_at_sign_boundaries() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut g = Graph::new();
        let i3 = g.leaf(Tensor::identity(3));
        let x = g.leaf(t(&[3, 2], &[1.0, -2.0, 3.5, 4.0, 0.25, -6.0]));
        let y = g.matmul(i3, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, AutodiffError::ShapeMismatch { op: "matmul", .. }));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y, &[x]).unwrap();
        assert_eq!(grads[0].item(), 6.0);
    }

    #[test]
    fn linear_gradient_rows_equal_input() {
        // f(W) = sum(W x) with x fixed: every row of df/dW equals x^T.
        let mut g = Graph::new();
        let w = g.leaf(t(&[2, 3], &[0.3, -1.0, 2.0, 0.5, 0.0, 1.5]));
        let x = g.leaf(t(&[3, 1], &[1.0, 2.0, -3.0]));
        let wx = g.matmul(w, x).unwrap();
        let f = g.sum(wx).unwrap();
        let grads = g.backward(f, &[w]).unwrap();
        assert_eq!(grads[0].data(), &[1.0, 2.0, -3.0, 1.0, 2.0, -3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let err = g.backward(x, &[x]).unwrap_err();
        assert!(matches!(err, AutodiffError::NonScalarOutput { .. }));
    }

    #[test]
    fn backward_leaves_graph_untouched() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, -2.0]));
        let s = g.sigmoid(x).unwrap();
        let y = g.sum(s).unwrap();
        let before = g.len();
        let snapshot = g.value(s).clone();
        g.backward(y, &[x]).unwrap();
        assert_eq!(g.len(), before);
        assert_eq!(g.value(s), &snapshot);
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let z = g.leaf(Tensor::vector(vec![1.0, 1.0]));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y, &[z]).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1000.0));
        let err = g.exp(x).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { op: "exp" }));
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, -50.0, 0.0, 50.0]));
        let y = g.log_softmax(x).unwrap();
        for row in g.value(y).data().chunks(3) {
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn second_derivative_of_cube() {
        // f = x^3, f'' = 6x
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let x2 = g.mul(x, x).unwrap();
        let x3 = g.mul(x2, x).unwrap();
        let d1 = g.grad(x3, &[x]).unwrap()[0];
        assert_eq!(g.value(d1).item(), 12.0);
        let d2 = g.backward(d1, &[x]).unwrap();
        assert_eq!(d2[0].item(), 12.0);
    }

    #[test]
    fn flops_are_counted() {
        let before = flop_count();
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]));
        let b = g.leaf(Tensor::zeros(&[3, 4]));
        g.matmul(a, b).unwrap();
        assert_eq!(flop_count() - before, 2 * 2 * 3 * 4);
    }
}
