//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node whose
//! parents already exist, so reverse insertion order is a valid reverse
//! topological order. Leaves borrow their matrices, which lets parameters be
//! bound into a graph without copying.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Matrix};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    MaxRows(Var, Vec<usize>),
    PoolRows(Var, usize),
    Sum(Var),
    /// Mean binary cross-entropy of `sigmoid(logits)` against constant targets.
    BceWithLogits(Var, Matrix),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Binds a borrowed matrix as a leaf.
    pub fn leaf(&mut self, m: &'a Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf)
    }

    pub fn leaf_owned(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    fn own(&mut self, m: Matrix, op: Op) -> Var {
        self.push(Cow::Owned(m), op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.value(a).matmul(self.value(b))?;
        Ok(self.own(m, Op::MatMul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.own(m, Op::MatMulNT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.value(a).add(self.value(b))?;
        Ok(self.own(m, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let m = self.value(a).add_row(self.value(bias))?;
        Ok(self.own(m, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let m = self.value(a).scale(c);
        self.own(m, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let m = self.value(a).tanh();
        self.own(m, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let m = self.value(a).sigmoid();
        self.own(m, Op::Sigmoid(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let m = self.value(a).row_softmax();
        self.own(m, Op::RowSoftmax(a))
    }

    /// Column-wise max over rows; the subgradient goes to the first argmax.
    pub fn temporal_maxpool(&mut self, a: Var) -> Result<Var> {
        let (m, arg) = self.value(a).max_rows()?;
        Ok(self.own(m, Op::MaxRows(a, arg)))
    }

    pub fn pool_rows(&mut self, a: Var, factor: usize) -> Result<Var> {
        let m = self.value(a).pool_rows(factor)?;
        Ok(self.own(m, Op::PoolRows(a, factor)))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).rows();
        if t == 0 {
            return Err(Error::EmptySequence("mean_rows"));
        }
        self.pool_rows(a, t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.own(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    /// Fused sigmoid + binary cross-entropy, averaged over every entry.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Matrix) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: z.shape(),
                rhs: targets.shape(),
            });
        }
        let p = z.sigmoid();
        let loss = bce_loss(&p, targets)?;
        Ok(self.own(
            Matrix::filled(1, 1, loss),
            Op::BceWithLogits(logits, targets.clone()),
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &*node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNT(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, bias) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, &v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *bias, db);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::Tanh(a) => {
                    let d = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                        let t = y.get(r, c);
                        g.get(r, c) * (1.0 - t * t)
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                        let s = y.get(r, c);
                        g.get(r, c) * s * (1.0 - s)
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::RowSoftmax(a) => {
                    let mut d = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..g.cols() {
                            d.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::MaxRows(a, arg) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for (c, &r) in arg.iter().enumerate() {
                        d.set(r, c, g.get(0, c));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::PoolRows(a, factor) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let o = r / factor;
                        let start = o * factor;
                        let n = ((start + factor).min(rows) - start) as f64;
                        for c in 0..cols {
                            d.set(r, c, g.get(o, c) / n);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(rows, cols, g.get(0, 0)));
                }
                Op::BceWithLogits(a, targets) => {
                    let z = self.value(*a);
                    let n = (z.rows() * z.cols()) as f64;
                    let scale = g.get(0, 0) / n;
                    let d = Matrix::from_fn(z.rows(), z.cols(), |r, c| {
                        let p = sigmoid(z.get(r, c));
                        if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                            0.0
                        } else {
                            scale * (p - targets.get(r, c))
                        }
                    });
                    accumulate(&mut grads, *a, d);
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Leaf gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of a leaf; zeros if the loss does not depend on it.
    pub fn get(&self, v: Var, graph: &Graph<'_>) -> Matrix {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = graph.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

/// Mean binary cross-entropy between probabilities `p` and targets `y`,
/// with `p` clamped away from 0 and 1.
pub fn bce_loss(p: &Matrix, y: &Matrix) -> Result<f64> {
    if p.shape() != y.shape() {
        return Err(Error::Shape {
            op: "bce_loss",
            lhs: p.shape(),
            rhs: y.shape(),
        });
    }
    let n = (p.rows() * p.cols()) as f64;
    let mut total = 0.0;
    for (&pi, &yi) in p.data().iter().zip(y.data()) {
        let pc = pi.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total += yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
    }
    Ok(-total / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let y = Matrix::from_rows(&[[1.0, 0.0, 1.0]]);
        assert!(bce_loss(&y, &y).unwrap() <= 1e-6);
        let half = bce_loss(&Matrix::filled(1, 1, 0.5), &Matrix::filled(1, 1, 1.0)).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-6);
        // -(ln 0.8 + ln 0.9) / 2
        let v = bce_loss(
            &Matrix::from_rows(&[[0.8, 0.1]]),
            &Matrix::from_rows(&[[1.0, 0.0]]),
        )
        .unwrap();
        assert!((v - 0.164252).abs() < 1e-6, "{v}");
        assert!(bce_loss(&Matrix::zeros(1, 2), &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let w = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let mut g = Graph::new();
        let wv = g.leaf(&w);
        let s = g.sum(wv);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(wv, &g), Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn backward_of_matmul_sum() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let b = Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0], [-3.0, 0.25]]);
        let mut g = Graph::new();
        let (av, bv) = (g.leaf(&a), g.leaf(&b));
        let c = g.matmul(av, bv).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        let ones = Matrix::filled(2, 2, 1.0);
        assert_eq!(grads.get(av, &g), ones.matmul(&b.transpose()).unwrap());
        assert_eq!(grads.get(bv, &g), a.transpose().matmul(&ones).unwrap());
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let a = Matrix::filled(2, 3, 1.0);
        let unused = Matrix::filled(3, 1, 4.0);
        let mut g = Graph::new();
        let av = g.leaf(&a);
        let uv = g.leaf(&unused);
        let s = g.sum(av);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(uv, &g), Matrix::zeros(3, 1));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let a = Matrix::zeros(2, 2);
        let mut g = Graph::new();
        let av = g.leaf(&a);
        assert!(matches!(g.backward(av), Err(Error::NonScalarLoss((2, 2)))));
    }

    #[test]
    fn fused_bce_matches_plain_loss() {
        let z = Matrix::from_rows(&[[0.3, -1.2, 2.0]]);
        let y = Matrix::from_rows(&[[1.0, 0.0, 0.0]]);
        let mut g = Graph::new();
        let zv = g.leaf(&z);
        let l = g.bce_with_logits(zv, &y).unwrap();
        let plain = bce_loss(&z.sigmoid(), &y).unwrap();
        assert_eq!(g.value(l).get(0, 0), plain);
        let grads = g.backward(l).unwrap();
        let expected = z.sigmoid().sub(&y).unwrap().scale(1.0 / 3.0);
        assert!(grads.get(zv, &g).max_abs_diff(&expected) < 1e-15);
    }
}
