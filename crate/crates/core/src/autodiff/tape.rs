//! Minimal reverse-mode tape over small dense tensors.
//!
//! Every node holds a row-major `rows × cols` buffer. Element-wise binary ops
//! broadcast when one operand has a single element. Constants never receive
//! adjoints; the backward pass only walks nodes that depend on a leaf.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Sigmoid(usize),
    Softplus(usize),
    Tanh(usize),
    Relu(usize),
    Atan(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Sum(usize),
    MatMul(usize, usize),
    Transpose(usize),
    AddRow(usize, usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Reshape(usize),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    live: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

fn bcast(len_a: usize, len_b: usize) -> usize {
    assert!(
        len_a == len_b || len_a == 1 || len_b == 1,
        "incompatible operand lengths {len_a} and {len_b}"
    );
    len_a.max(len_b)
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, live: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            live,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
        &self.nodes[v.idx]
    }

    /// Differentiable input, shaped as a column of `values.len()` entries.
    pub fn leaf(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(values, n, 1, Op::Leaf, true)
    }

    pub fn scalar_leaf(&mut self, x: f64) -> Var {
        self.leaf(vec![x])
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        let n = values.len();
        self.push(values, n, 1, Op::Const, false)
    }

    pub fn matrix_constant(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(values, rows, cols, Op::Const, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        let len = bcast(na.value.len(), nb.value.len());
        let (rows, cols) = if na.value.len() >= nb.value.len() {
            (na.rows, na.cols)
        } else {
            (nb.rows, nb.cols)
        };
        let value = (0..len)
            .map(|i| {
                let x = na.value[if na.value.len() == 1 { 0 } else { i }];
                let y = nb.value[if nb.value.len() == 1 { 0 } else { i }];
                f(x, y)
            })
            .collect();
        let live = na.live || nb.live;
        self.push(value, rows, cols, op, live)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let n = self.node(a);
        let value = n.value.iter().map(|&x| f(x)).collect();
        let (rows, cols, live) = (n.rows, n.cols, n.live);
        self.push(value, rows, cols, op, live)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a.idx, b.idx), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a.idx, b.idx), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a.idx, b.idx), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a.idx, b.idx), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a.idx, c), |x| c * x)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Offset(a.idx), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.idx), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a.idx), softplus)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.idx), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a.idx), |x| x.max(0.0))
    }

    pub fn atan(&mut self, a: Var) -> Var {
        self.unary(a, Op::Atan(a.idx), f64::atan)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.idx), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a.idx), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a.idx), f64::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a.idx), |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.iter().sum();
        let live = n.live;
        self.push(vec![s], 1, 1, Op::Sum(a.idx), live)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a).value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Views the buffer as `rows × cols` without copying semantics.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let n = self.node(a);
        assert_eq!(n.value.len(), rows * cols, "reshape size mismatch");
        let (value, live) = (n.value.clone(), n.live);
        self.push(value, rows, cols, Op::Reshape(a.idx), live)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        assert_eq!(na.cols, nb.rows, "matmul inner dimension mismatch");
        let (r, k, c) = (na.rows, na.cols, nb.cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for p in 0..k {
                let x = na.value[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let row = &nb.value[p * c..(p + 1) * c];
                for (o, y) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *o += x * y;
                }
            }
        }
        let live = na.live || nb.live;
        self.push(out, r, c, Op::MatMul(a.idx, b.idx), live)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (r, c) = (n.rows, n.cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = n.value[i * c + j];
            }
        }
        let live = n.live;
        self.push(out, c, r, Op::Transpose(a.idx), live)
    }

    /// Adds a length-`cols` vector to every row of a matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        let (nm, nr) = (self.node(m), self.node(row));
        assert_eq!(nr.value.len(), nm.cols, "row broadcast length mismatch");
        let c = nm.cols;
        let value = nm
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + nr.value[i % c])
            .collect();
        let (rows, live) = (nm.rows, nm.live || nr.live);
        self.push(value, rows, c, Op::AddRow(m.idx, row.idx), live)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (r, c) = (n.rows, n.cols);
        let mut out = n.value.clone();
        for row in out.chunks_mut(c) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        let live = n.live;
        self.push(out, r, c, Op::SoftmaxRows(a.idx), live)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let (r, c) = (n.rows, n.cols);
        let mut out = n.value.clone();
        for row in out.chunks_mut(c) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let live = n.live;
        self.push(out, r, c, Op::LogSoftmaxRows(a.idx), live)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if output.tape != self.id {
            return Err(Error::ForeignVariable);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.idx + 1];
        grads[output.idx] = Some(vec![1.0; self.nodes[output.idx].value.len()]);
        for idx in (0..=output.idx).rev() {
            let node = &self.nodes[idx];
            if !node.live {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let acc =
            |grads: &mut [Option<Vec<f64>>], target: usize, contrib: &mut dyn FnMut(&mut [f64])| {
                if !self.nodes[target].live {
                    return;
                }
                let len = self.nodes[target].value.len();
                let slot = grads[target].get_or_insert_with(|| vec![0.0; len]);
                contrib(slot);
            };
        // accumulate an element-wise contribution, summing over broadcast
        let acc_bcast =
            |grads: &mut [Option<Vec<f64>>], target: usize, d: &dyn Fn(usize) -> f64| {
                let tl = self.nodes[target].value.len();
                acc(grads, target, &mut |slot| {
                    if tl == 1 {
                        slot[0] += (0..g.len()).map(|i| g[i] * d(i)).sum::<f64>();
                    } else {
                        for i in 0..g.len() {
                            slot[i] += g[i] * d(i);
                        }
                    }
                });
            };
        let at = |v: &Vec<f64>, i: usize| v[if v.len() == 1 { 0 } else { i }];
        match node.op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                acc_bcast(grads, a, &|_| 1.0);
                acc_bcast(grads, b, &|_| 1.0);
            }
            Op::Sub(a, b) => {
                acc_bcast(grads, a, &|_| 1.0);
                acc_bcast(grads, b, &|_| -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                acc_bcast(grads, a, &|i| at(vb, i));
                acc_bcast(grads, b, &|i| at(va, i));
            }
            Op::Div(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                acc_bcast(grads, a, &|i| 1.0 / at(vb, i));
                acc_bcast(grads, b, &|i| -at(va, i) / (at(vb, i) * at(vb, i)));
            }
            Op::Scale(a, c) => acc_bcast(grads, a, &|_| c),
            Op::Offset(a) | Op::Reshape(a) => acc_bcast(grads, a, &|_| 1.0),
            Op::Sigmoid(a) => acc_bcast(grads, a, &|i| y[i] * (1.0 - y[i])),
            Op::Softplus(a) => {
                let x = &self.nodes[a].value;
                acc_bcast(grads, a, &|i| sigmoid(x[i]))
            }
            Op::Tanh(a) => acc_bcast(grads, a, &|i| 1.0 - y[i] * y[i]),
            Op::Relu(a) => {
                let x = &self.nodes[a].value;
                acc_bcast(grads, a, &|i| if x[i] > 0.0 { 1.0 } else { 0.0 })
            }
            Op::Atan(a) => {
                let x = &self.nodes[a].value;
                acc_bcast(grads, a, &|i| 1.0 / (1.0 + x[i] * x[i]))
            }
            Op::Exp(a) => acc_bcast(grads, a, &|i| y[i]),
            Op::Ln(a) => {
                let x = &self.nodes[a].value;
                acc_bcast(grads, a, &|i| 1.0 / x[i])
            }
            Op::Sqrt(a) => acc_bcast(grads, a, &|i| 0.5 / y[i]),
            Op::Square(a) => {
                let x = &self.nodes[a].value;
                acc_bcast(grads, a, &|i| 2.0 * x[i])
            }
            Op::Sum(a) => {
                let s = g[0];
                acc(grads, a, &mut |slot| slot.iter_mut().for_each(|x| *x += s));
            }
            Op::MatMul(a, b) => {
                let (na, nb) = (&self.nodes[a], &self.nodes[b]);
                let (r, k, c) = (na.rows, na.cols, nb.cols);
                acc(grads, a, &mut |slot| {
                    for i in 0..r {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..c {
                                s += g[i * c + j] * nb.value[p * c + j];
                            }
                            slot[i * k + p] += s;
                        }
                    }
                });
                acc(grads, b, &mut |slot| {
                    for i in 0..r {
                        for p in 0..k {
                            let x = na.value[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..c {
                                slot[p * c + j] += x * g[i * c + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.nodes[a].rows, self.nodes[a].cols);
                acc(grads, a, &mut |slot| {
                    for i in 0..r {
                        for j in 0..c {
                            slot[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::AddRow(m, row) => {
                let c = node.cols;
                acc(grads, m, &mut |slot| {
                    slot.iter_mut().zip(g).for_each(|(s, x)| *s += x)
                });
                acc(grads, row, &mut |slot| {
                    for (i, x) in g.iter().enumerate() {
                        slot[i % c] += x;
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let c = node.cols;
                acc(grads, a, &mut |slot| {
                    for (r, (yr, gr)) in y.chunks(c).zip(g.chunks(c)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            slot[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let c = node.cols;
                acc(grads, a, &mut |slot| {
                    for (r, (yr, gr)) in y.chunks(c).zip(g.chunks(c)).enumerate() {
                        let gs: f64 = gr.iter().sum();
                        for j in 0..c {
                            slot[r * c + j] += gr[j] - yr[j].exp() * gs;
                        }
                    }
                });
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the output with respect to `v` (zeros when `v` does not
    /// influence it).
    pub fn wrt(&self, v: Var, len: usize) -> Result<Vec<f64>> {
        if v.tape != self.tape {
            return Err(Error::ForeignVariable);
        }
        Ok(self
            .grads
            .get(v.idx)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; len]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut t = Tape::new();
        let x = t.leaf(vec![1.0, -2.0, 3.5]);
        let sq = t.square(x);
        let s = t.sum(sq);
        let out = t.scale(s, 0.5);
        let g = t.backward(out).unwrap();
        assert_eq!(g.wrt(x, 3).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn softplus_slope_at_zero() {
        let mut t = Tape::new();
        let k = t.scalar_leaf(0.0);
        let y = t.softplus(k);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(k, 1).unwrap(), vec![0.5]);
    }

    #[test]
    fn foreign_variables_are_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let xa = a.scalar_leaf(1.0);
        let xb = b.scalar_leaf(1.0);
        let ya = a.square(xa);
        let g = a.backward(ya).unwrap();
        assert!(matches!(g.wrt(xb, 1), Err(Error::ForeignVariable)));
        let yb = b.square(xb);
        assert!(matches!(a.backward(yb), Err(Error::ForeignVariable)));
    }

    #[test]
    fn broadcast_scalar_accumulates() {
        let mut t = Tape::new();
        let s = t.scalar_leaf(2.0);
        let v = t.constant(vec![1.0, 2.0, 3.0]);
        let p = t.mul(v, s);
        let out = t.sum(p);
        assert_eq!(t.scalar(out), 12.0);
        let g = t.backward(out).unwrap();
        assert_eq!(g.wrt(s, 1).unwrap(), vec![6.0]);
    }

    #[test]
    fn matmul_and_transpose_match_fd() {
        let a0 = vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
        let b0 = vec![1.1, 0.2, -0.3, 0.5, 0.9, -1.4];
        let f = |a: &[f64], b: &[f64]| {
            let mut t = Tape::new();
            let a = t.matrix_constant(a.to_vec(), 2, 3);
            let b = t.matrix_constant(b.to_vec(), 3, 2);
            let m = t.matmul(a, b);
            let mt = t.transpose(m);
            let sm = t.log_softmax_rows(mt);
            let sq = t.square(sm);
            let out = t.sum(sq);
            t.scalar(out)
        };
        let mut t = Tape::new();
        let a = t.leaf(a0.clone());
        let b = t.leaf(b0.clone());
        let a2 = t.reshape(a, 2, 3);
        let b2 = t.reshape(b, 3, 2);
        let m = t.matmul(a2, b2);
        let mt = t.transpose(m);
        let sm = t.log_softmax_rows(mt);
        let sq = t.square(sm);
        let out = t.sum(sq);
        let g = t.backward(out).unwrap();
        let ga = g.wrt(a, 6).unwrap();
        let gb = g.wrt(b, 6).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let (mut ap, mut am) = (a0.clone(), a0.clone());
            ap[i] += h;
            am[i] -= h;
            let fd = (f(&ap, &b0) - f(&am, &b0)) / (2.0 * h);
            assert!((fd - ga[i]).abs() < 1e-6, "a[{i}]: {fd} vs {}", ga[i]);
            let (mut bp, mut bm) = (b0.clone(), b0.clone());
            bp[i] += h;
            bm[i] -= h;
            let fd = (f(&a0, &bp) - f(&a0, &bm)) / (2.0 * h);
            assert!((fd - gb[i]).abs() < 1e-6, "b[{i}]: {fd} vs {}", gb[i]);
        }
    }
}
