//! Reverse-mode automatic differentiation over [`Array`] values.
//!
//! A [`Tape`] records the forward computation as a flat list of nodes;
//! [`Tape::backward`] walks it in reverse and accumulates gradients for
//! every node, including leaves. A fresh tape is built per training batch,
//! so there is no cross-step state.
//!
//! Softmax, log-softmax, layer norm and row normalization are fused ops
//! with hand-derived adjoints; everything else composes from elementwise
//! and matrix primitives. All fused adjoints are covered by finite
//! difference checks in the test module.

use crate::tensor::Array;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    /// `(m,n) + (1,n)` row broadcast.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `(m,n) * (1,1)` scalar broadcast.
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    /// Rows scaled to unit L2 norm; rows with norm < 1e-12 map to zero.
    NormalizeRows(Var),
    SumAll(Var),
    MeanAll(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    /// Per-row column pick: `out[r, 0] = x[r, idx[r]]`.
    SelectCols(Var, Vec<usize>),
    LayerNormRows { x: Var, gamma: Var, beta: Var, eps: f64 },
}

struct Node {
    op: Op,
    value: Array,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for every tape node, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Array>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> &Array {
        &self.grads[v.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Array) -> Var {
        debug_assert!(value.rows() > 0 && value.cols() > 0, "empty arrays are not supported on the tape");
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Insert a value. Leaves receive gradients like any other node; a
    /// "constant" is simply a leaf whose gradient the caller ignores.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.leaf(Array::scalar(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), v)
    }

    /// `a (m,n) + b (1,n)`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1);
        assert_eq!(av.cols(), bv.cols());
        let mut out = av.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.add_at(r, c, bv.get(0, c));
            }
        }
        self.push(Op::AddRow(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape());
        let mut out = av.clone();
        for (o, x) in out.as_mut_slice().iter_mut().zip(bv.as_slice()) {
            *o *= x;
        }
        self.push(Op::Mul(a, b), out)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape());
        let mut out = av.clone();
        for (o, x) in out.as_mut_slice().iter_mut().zip(bv.as_slice()) {
            *o /= x;
        }
        self.push(Op::Div(a, b), out)
    }

    /// `a (m,n) * s (1,1)`, broadcasting the scalar.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).shape(), (1, 1));
        let c = self.value(s).get(0, 0);
        let v = self.value(a).scale(c);
        self.push(Op::MulScalar(a, s), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Array::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let row = av.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                out.set(r, c, e);
                sum += e;
            }
            for c in 0..av.cols() {
                out.set(r, c, out.get(r, c) / sum);
            }
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Array::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let row = av.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            for (c, &x) in row.iter().enumerate() {
                out.set(r, c, x - lse);
            }
        }
        self.push(Op::LogSoftmaxRows(a), out)
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in 0..out.rows() {
            let n = av.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-12 {
                out.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
            } else {
                out.row_mut(r).iter_mut().for_each(|x| *x /= n);
            }
        }
        self.push(Op::NormalizeRows(a), out)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Array::scalar(av.sum() / av.len() as f64);
        self.push(Op::MeanAll(a), v)
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        assert!(!indices.is_empty(), "gather_rows needs at least one index");
        let tv = self.value(table);
        let mut out = Array::zeros(indices.len(), tv.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(tv.row(i));
        }
        self.push(Op::GatherRows(table, indices.to_vec()), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut out = Array::zeros(rows, cols);
        let mut r0 = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols);
            for r in 0..pv.rows() {
                out.row_mut(r0 + r).copy_from_slice(pv.row(r));
            }
            r0 += pv.rows();
        }
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Array::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows);
            for r in 0..rows {
                for c in 0..pv.cols() {
                    out.set(r, c0 + c, pv.get(r, c));
                }
            }
            c0 += pv.cols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols());
        let mut out = Array::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols(a, start, len), out)
    }

    pub fn select_cols(&mut self, a: Var, indices: &[usize]) -> Var {
        let av = self.value(a);
        assert_eq!(indices.len(), av.rows());
        let mut out = Array::zeros(av.rows(), 1);
        for (r, &c) in indices.iter().enumerate() {
            out.set(r, 0, av.get(r, c));
        }
        self.push(Op::SelectCols(a, indices.to_vec()), out)
    }

    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        assert_eq!(gv.shape(), (1, xv.cols()));
        assert_eq!(bv.shape(), (1, xv.cols()));
        let n = xv.cols() as f64;
        let mut out = Array::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..xv.cols() {
                let xhat = (row[c] - mean) * inv;
                out.set(r, c, xhat * gv.get(0, c) + bv.get(0, c));
            }
        }
        self.push(Op::LayerNormRows { x, gamma, beta, eps }, out)
    }

    // Convenience compositions.

    /// Dot product of two `1 x d` rows as a `(1,1)` scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum_all(p)
    }

    /// Cosine similarity of two `1 x d` rows. The caller must guarantee
    /// both norms are bounded away from zero.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let num = self.dot(a, b);
        let aa = self.dot(a, a);
        let bb = self.dot(b, b);
        let na = self.sqrt(aa);
        let nb = self.sqrt(bb);
        let den = self.mul(na, nb);
        self.div(num, den)
    }

    /// Runs the backward pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Array> = self
            .nodes
            .iter()
            .map(|n| Array::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[root.0] = Array::scalar(1.0);

        for i in (0..=root.0).rev() {
            if grads[i].max_abs() == 0.0 {
                continue;
            }
            let g = std::mem::replace(&mut grads[i], Array::zeros(1, 1));
            self.accumulate(i, &g, &mut grads);
            grads[i] = g;
        }
        Gradients { grads }
    }

    fn accumulate(&self, i: usize, g: &Array, grads: &mut [Array]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(&mut grads[a.0], g);
                add_into(&mut grads[b.0], g);
            }
            Op::AddRow(a, b) => {
                add_into(&mut grads[a.0], g);
                let gb = &mut grads[b.0];
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        gb.add_at(0, c, g.get(r, c));
                    }
                }
            }
            Op::Sub(a, b) => {
                add_into(&mut grads[a.0], g);
                sub_into(&mut grads[b.0], g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                mul_add_into(&mut grads[a.0], g, bv);
                mul_add_into(&mut grads[b.0], g, av);
            }
            Op::Div(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                for idx in 0..g.len() {
                    let gd = g.as_slice()[idx];
                    let bx = bv.as_slice()[idx];
                    grads[a.0].as_mut_slice()[idx] += gd / bx;
                    grads[b.0].as_mut_slice()[idx] -= gd * av.as_slice()[idx] / (bx * bx);
                }
            }
            Op::MulScalar(a, s) => {
                let c = self.nodes[s.0].value.get(0, 0);
                let av = &self.nodes[a.0].value;
                for idx in 0..g.len() {
                    grads[a.0].as_mut_slice()[idx] += g.as_slice()[idx] * c;
                }
                let ds: f64 = g.as_slice().iter().zip(av.as_slice()).map(|(x, y)| x * y).sum();
                grads[s.0].add_at(0, 0, ds);
            }
            Op::Scale(a, c) => {
                for idx in 0..g.len() {
                    grads[a.0].as_mut_slice()[idx] += g.as_slice()[idx] * c;
                }
            }
            Op::AddConst(a) => add_into(&mut grads[a.0], g),
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let da = g.matmul(&bv.transpose());
                add_into(&mut grads[a.0], &da);
                let db = av.transpose().matmul(g);
                add_into(&mut grads[b.0], &db);
            }
            Op::Transpose(a) => {
                let da = g.transpose();
                add_into(&mut grads[a.0], &da);
            }
            Op::Relu(a) => {
                let xv = &self.nodes[a.0].value;
                for idx in 0..g.len() {
                    if xv.as_slice()[idx] > 0.0 {
                        grads[a.0].as_mut_slice()[idx] += g.as_slice()[idx];
                    }
                }
            }
            Op::Tanh(a) => {
                let yv = &node.value;
                for idx in 0..g.len() {
                    let y = yv.as_slice()[idx];
                    grads[a.0].as_mut_slice()[idx] += g.as_slice()[idx] * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                let yv = &node.value;
                for idx in 0..g.len() {
                    let y = yv.as_slice()[idx];
                    grads[a.0].as_mut_slice()[idx] += g.as_slice()[idx] * y * (1.0 - y);
                }
            }
            Op::Exp(a) => {
                let yv = &node.value;
                for idx in 0..g.len() {
                    grads[a.0].as_mut_slice()[idx] += g.as_slice()[idx] * yv.as_slice()[idx];
                }
            }
            Op::Ln(a) => {
                let xv = &self.nodes[a.0].value;
                for idx in 0..g.len() {
                    grads[a.0].as_mut_slice()[idx] += g.as_slice()[idx] / xv.as_slice()[idx];
                }
            }
            Op::Sqrt(a) => {
                let yv = &node.value;
                for idx in 0..g.len() {
                    grads[a.0].as_mut_slice()[idx] += g.as_slice()[idx] / (2.0 * yv.as_slice()[idx]);
                }
            }
            Op::SoftmaxRows(a) => {
                let yv = &node.value;
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    let dotv: f64 =
                        g.row(r).iter().zip(yv.row(r)).map(|(gd, y)| gd * y).sum();
                    for c in 0..g.cols() {
                        let y = yv.get(r, c);
                        ga.add_at(r, c, y * (g.get(r, c) - dotv));
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let yv = &node.value;
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    let gsum: f64 = g.row(r).iter().sum();
                    for c in 0..g.cols() {
                        let p = yv.get(r, c).exp();
                        ga.add_at(r, c, g.get(r, c) - p * gsum);
                    }
                }
            }
            Op::NormalizeRows(a) => {
                let xv = &self.nodes[a.0].value;
                let yv = &node.value;
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    let n = xv.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n < 1e-12 {
                        continue;
                    }
                    let ydot: f64 =
                        g.row(r).iter().zip(yv.row(r)).map(|(gd, y)| gd * y).sum();
                    for c in 0..g.cols() {
                        ga.add_at(r, c, (g.get(r, c) - yv.get(r, c) * ydot) / n);
                    }
                }
            }
            Op::SumAll(a) => {
                let gd = g.get(0, 0);
                for x in grads[a.0].as_mut_slice() {
                    *x += gd;
                }
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                let gd = g.get(0, 0) / n;
                for x in grads[a.0].as_mut_slice() {
                    *x += gd;
                }
            }
            Op::GatherRows(table, indices) => {
                let gt = &mut grads[table.0];
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..g.cols() {
                        gt.add_at(i, c, g.get(r, c));
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let rows = self.nodes[p.0].value.rows();
                    let gp = &mut grads[p.0];
                    for r in 0..rows {
                        for c in 0..g.cols() {
                            gp.add_at(r, c, g.get(r0 + r, c));
                        }
                    }
                    r0 += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let cols = self.nodes[p.0].value.cols();
                    let gp = &mut grads[p.0];
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            gp.add_at(r, c, g.get(r, c0 + c));
                        }
                    }
                    c0 += cols;
                }
            }
            Op::SliceCols(a, start, len) => {
                let ga = &mut grads[a.0];
                for r in 0..g.rows() {
                    for c in 0..*len {
                        ga.add_at(r, start + c, g.get(r, c));
                    }
                }
            }
            Op::SelectCols(a, indices) => {
                let ga = &mut grads[a.0];
                for (r, &c) in indices.iter().enumerate() {
                    ga.add_at(r, c, g.get(r, 0));
                }
            }
            Op::LayerNormRows { x, gamma, beta, eps } => {
                let xv = &self.nodes[x.0].value;
                let gv = &self.nodes[gamma.0].value;
                let n = xv.cols() as f64;
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let mean = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    // dxhat, then reduce to dx via the standard layer-norm adjoint.
                    let mut dxhat = vec![0.0; xv.cols()];
                    let mut dxhat_sum = 0.0;
                    let mut dxhat_xhat_sum = 0.0;
                    for c in 0..xv.cols() {
                        let xhat = (row[c] - mean) * inv;
                        let d = g.get(r, c) * gv.get(0, c);
                        dxhat[c] = d;
                        dxhat_sum += d;
                        dxhat_xhat_sum += d * xhat;
                        grads[gamma.0].add_at(0, c, g.get(r, c) * xhat);
                        grads[beta.0].add_at(0, c, g.get(r, c));
                    }
                    for c in 0..xv.cols() {
                        let xhat = (row[c] - mean) * inv;
                        let dx = inv * (dxhat[c] - dxhat_sum / n - xhat * dxhat_xhat_sum / n);
                        grads[x.0].add_at(r, c, dx);
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut Array, src: &Array) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += s;
    }
}

fn sub_into(dst: &mut Array, src: &Array) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d -= s;
    }
}

fn mul_add_into(dst: &mut Array, g: &Array, other: &Array) {
    for i in 0..g.len() {
        dst.as_mut_slice()[i] += g.as_slice()[i] * other.as_slice()[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` at `x0`, step `h`.
    fn fd_grad(f: &dyn Fn(&Array) -> f64, x0: &Array, h: f64) -> Array {
        let mut g = Array::zeros(x0.rows(), x0.cols());
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x0.clone();
            xm.as_mut_slice()[i] -= h;
            g.as_mut_slice()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn max_rel_err(a: &Array, b: &Array) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| (x - y).abs() / f64::max(1e-6, x.abs() + y.abs()))
            .fold(0.0, f64::max)
    }

    fn check_unary(build: impl Fn(&mut Tape, Var) -> Var, rows: usize, cols: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Array::uniform(rows, cols, 0.9, &mut rng).map(|v| v + 0.15 * v.signum());
        // Weight the output sum so the upstream adjoint is non-uniform;
        // a uniform adjoint is degenerate for softmax-like ops.
        let f = |x: &Array| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let y = build(&mut t, v);
            let (yr, yc) = t.value(y).shape();
            let w = t.leaf(Array::from_fn(yr, yc, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0));
            let wy = t.mul(y, w);
            let s = t.sum_all(wy);
            t.value(s).get(0, 0)
        };
        let mut t = Tape::new();
        let v = t.leaf(x0.clone());
        let y = build(&mut t, v);
        let (yr, yc) = t.value(y).shape();
        let w = t.leaf(Array::from_fn(yr, yc, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0));
        let wy = t.mul(y, w);
        let s = t.sum_all(wy);
        let grads = t.backward(s);
        let fd = fd_grad(&f, &x0, 1e-5);
        let err = max_rel_err(grads.get(v), &fd);
        // 1e-4 leaves room for FD roundoff on entries whose exact gradient is 0
        assert!(err < 1e-4, "gradient mismatch: {err}");
    }

    #[test]
    fn unary_op_gradients() {
        check_unary(|t, v| t.tanh(v), 3, 4, 1);
        check_unary(|t, v| t.sigmoid(v), 3, 4, 2);
        check_unary(|t, v| t.exp(v), 2, 3, 3);
        check_unary(|t, v| t.softmax_rows(v), 3, 5, 4);
        check_unary(|t, v| t.log_softmax_rows(v), 3, 5, 5);
        check_unary(|t, v| t.normalize_rows(v), 3, 4, 6);
        check_unary(|t, v| t.transpose(v), 3, 4, 7);
        check_unary(
            |t, v| {
                let s = t.softmax_rows(v);
                t.ln(s)
            },
            2,
            4,
            8,
        );
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        // inputs bounded away from zero so FD is valid
        let x0 = Array::from_vec(2, 3, vec![1.0, -2.0, 0.5, -0.25, 3.0, -1.5]);
        let f = |x: &Array| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let y = t.relu(v);
            let s = t.sum_all(y);
            t.value(s).get(0, 0)
        };
        let mut t = Tape::new();
        let v = t.leaf(x0.clone());
        let y = t.relu(v);
        let s = t.sum_all(y);
        let grads = t.backward(s);
        let fd = fd_grad(&f, &x0, 1e-5);
        assert!(max_rel_err(grads.get(v), &fd) < 1e-6);
    }

    #[test]
    fn matmul_gradients_both_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a0 = Array::uniform(3, 4, 1.0, &mut rng);
        let b0 = Array::uniform(4, 2, 1.0, &mut rng);

        let f_a = |x: &Array| {
            let mut t = Tape::new();
            let a = t.leaf(x.clone());
            let b = t.leaf(b0.clone());
            let y = t.matmul(a, b);
            let sq = t.mul(y, y);
            let s = t.sum_all(sq);
            t.value(s).get(0, 0)
        };
        let f_b = |x: &Array| {
            let mut t = Tape::new();
            let a = t.leaf(a0.clone());
            let b = t.leaf(x.clone());
            let y = t.matmul(a, b);
            let sq = t.mul(y, y);
            let s = t.sum_all(sq);
            t.value(s).get(0, 0)
        };

        let mut t = Tape::new();
        let a = t.leaf(a0.clone());
        let b = t.leaf(b0.clone());
        let y = t.matmul(a, b);
        let sq = t.mul(y, y);
        let s = t.sum_all(sq);
        let grads = t.backward(s);

        assert!(max_rel_err(grads.get(a), &fd_grad(&f_a, &a0, 1e-5)) < 1e-6);
        assert!(max_rel_err(grads.get(b), &fd_grad(&f_b, &b0, 1e-5)) < 1e-6);
    }

    #[test]
    fn gather_scatter_and_select() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let t0 = Array::uniform(5, 3, 1.0, &mut rng);
        let idx = vec![1, 3, 1]; // duplicate row on purpose
        let sel = vec![0, 2, 1];

        let f = |x: &Array| {
            let mut t = Tape::new();
            let table = t.leaf(x.clone());
            let rows = t.gather_rows(table, &idx);
            let picked = t.select_cols(rows, &sel);
            let sq = t.mul(picked, picked);
            let s = t.sum_all(sq);
            t.value(s).get(0, 0)
        };

        let mut t = Tape::new();
        let table = t.leaf(t0.clone());
        let rows = t.gather_rows(table, &idx);
        let picked = t.select_cols(rows, &sel);
        let sq = t.mul(picked, picked);
        let s = t.sum_all(sq);
        let grads = t.backward(s);
        assert!(max_rel_err(grads.get(table), &fd_grad(&f, &t0, 1e-5)) < 1e-6);
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x0 = Array::uniform(3, 6, 1.0, &mut rng);
        let g0 = Array::uniform(1, 6, 1.0, &mut rng);
        let b0 = Array::uniform(1, 6, 1.0, &mut rng);

        let run = |x: &Array, g: &Array, b: &Array| -> f64 {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let gv = t.leaf(g.clone());
            let bv = t.leaf(b.clone());
            let y = t.layer_norm_rows(xv, gv, bv, 1e-5);
            let sq = t.mul(y, y);
            let s = t.sum_all(sq);
            t.value(s).get(0, 0)
        };

        let mut t = Tape::new();
        let xv = t.leaf(x0.clone());
        let gv = t.leaf(g0.clone());
        let bv = t.leaf(b0.clone());
        let y = t.layer_norm_rows(xv, gv, bv, 1e-5);
        let sq = t.mul(y, y);
        let s = t.sum_all(sq);
        let grads = t.backward(s);

        let fd_x = fd_grad(&|x: &Array| run(x, &g0, &b0), &x0, 1e-5);
        let fd_g = fd_grad(&|g: &Array| run(&x0, g, &b0), &g0, 1e-5);
        let fd_b = fd_grad(&|b: &Array| run(&x0, &g0, b), &b0, 1e-5);
        assert!(max_rel_err(grads.get(xv), &fd_x) < 1e-5);
        assert!(max_rel_err(grads.get(gv), &fd_g) < 1e-5);
        assert!(max_rel_err(grads.get(bv), &fd_b) < 1e-5);
    }

    #[test]
    fn composite_cosine_and_scalar_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a0 = Array::uniform(1, 5, 1.0, &mut rng).map(|x| x + 0.3 * x.signum());
        let b0 = Array::uniform(1, 5, 1.0, &mut rng).map(|x| x + 0.3 * x.signum());

        let f = |x: &Array| {
            let mut t = Tape::new();
            let a = t.leaf(x.clone());
            let b = t.leaf(b0.clone());
            let c = t.cosine(a, b);
            let tau = t.sigmoid(c);
            let mixed = t.mul_scalar(a, tau);
            let s = t.sum_all(mixed);
            t.value(s).get(0, 0)
        };

        let mut t = Tape::new();
        let a = t.leaf(a0.clone());
        let b = t.leaf(b0.clone());
        let c = t.cosine(a, b);
        let tau = t.sigmoid(c);
        let mixed = t.mul_scalar(a, tau);
        let s = t.sum_all(mixed);
        let grads = t.backward(s);
        assert!(max_rel_err(grads.get(a), &fd_grad(&f, &a0, 1e-5)) < 1e-6);
    }

    #[test]
    fn concat_and_slice_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a0 = Array::uniform(2, 3, 1.0, &mut rng);
        let b0 = Array::uniform(2, 2, 1.0, &mut rng);

        let f = |x: &Array| {
            let mut t = Tape::new();
            let a = t.leaf(x.clone());
            let b = t.leaf(b0.clone());
            let cat = t.concat_cols(&[a, b]);
            let sl = t.slice_cols(cat, 1, 3);
            let sq = t.mul(sl, sl);
            let s = t.sum_all(sq);
            t.value(s).get(0, 0)
        };

        let mut t = Tape::new();
        let a = t.leaf(a0.clone());
        let b = t.leaf(b0.clone());
        let cat = t.concat_cols(&[a, b]);
        let sl = t.slice_cols(cat, 1, 3);
        let sq = t.mul(sl, sl);
        let s = t.sum_all(sq);
        let grads = t.backward(s);
        assert!(max_rel_err(grads.get(a), &fd_grad(&f, &a0, 1e-5)) < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let x = Array::uniform(4, 7, 5.0, &mut rng);
            let mut t = Tape::new();
            let v = t.leaf(x);
            let y = t.softmax_rows(v);
            for r in 0..4 {
                let s: f64 = t.value(y).row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
