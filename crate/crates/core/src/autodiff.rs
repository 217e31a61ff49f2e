//! Reverse-mode differentiation over a recorded tape of matrix ops.
//!
//! Only the handful of operations the CPR objective needs are supported:
//! affine maps, ReLU, log-softmax, exp, concatenation, per-row picks and
//! minima, and reductions. Every value on the tape is a rank-2 tensor;
//! scalars are `[1, 1]`.

use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    /// Elementwise add with `b` broadcast over rows (`[1, c]`) or entirely (`[1, 1]`).
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    LogSoftmax(Var),
    ConcatCols(Var, Var),
    /// One column per row, `[r, 1]`.
    Pick(Var, Vec<usize>),
    /// Row-wise minimum, `[r, 1]`; the stored index is the lowest argmin.
    RowMin(Var, Vec<usize>),
    SumRows(Var),
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    slot: Option<usize>,
}

/// Gradients for parameter leaves, indexed by the slot passed to [`Tape::param`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_slot: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, slot: usize) -> Option<&Tensor> {
        self.by_slot.get(slot).and_then(|g| g.as_ref())
    }

    /// Adds every recorded gradient into `params[slot].grad`.
    pub fn accumulate(&self, params: &mut [&mut crate::tensor::Param]) -> Result<()> {
        for (slot, g) in self.by_slot.iter().enumerate() {
            if let Some(g) = g {
                let p = params.get_mut(slot).ok_or_else(|| {
                    Error::State(format!("gradient for slot {slot} has no parameter"))
                })?;
                p.grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape()
        || (b.rows() == 1 && b.cols() == a.cols())
        || (b.rows() == 1 && b.cols() == 1)
}

fn broadcast_index(b: &Tensor, cols: usize, i: usize) -> usize {
    if b.len() == 1 {
        0
    } else if b.rows() == 1 {
        i % cols
    } else {
        i
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            slot: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix(t: Tensor) -> Tensor {
        if t.shape().len() == 2 {
            t
        } else {
            let (r, c) = (t.rows(), t.cols());
            Tensor::new(vec![r, c], t.into_data()).expect("reshape preserves length")
        }
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Self::matrix(value), Op::Leaf)
    }

    /// Records a trainable leaf whose gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: &Tensor) -> Var {
        let v = self.push(Self::matrix(value.clone()), Op::Leaf);
        self.nodes[v.0].slot = Some(slot);
        v
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} · {:?}ᵀ", av.shape(), bv.shape()),
            ));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.rows());
        let out = matmul_nt(av.data(), bv.data(), n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMulNt(a, b)))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if !broadcast_ok(av, bv) {
            return Err(Error::shape(name, format!("{:?} with {:?}", av.shape(), bv.shape())));
        }
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[broadcast_index(bv, cols, i)]))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x *= c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x = x.exp());
        self.push(t, Op::Exp(a))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let c = t.cols();
        for row in t.data_mut().chunks_mut(c) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(t, Op::LogSoftmax(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} with {:?}", av.shape(), bv.shape()),
            ));
        }
        let (r, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(av.row_slice(i));
            data.extend_from_slice(bv.row_slice(i));
        }
        Ok(self.push(Tensor::new(vec![r, ca + cb], data)?, Op::ConcatCols(a, b)))
    }

    /// Selects `a[i, idx[i]]` for each row, giving `[r, 1]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.len() != av.rows() || idx.iter().any(|&j| j >= av.cols()) {
            return Err(Error::shape(
                "pick",
                format!("{} indices into {:?}", idx.len(), av.shape()),
            ));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| av.get(i, j)).collect();
        let t = Tensor::new(vec![idx.len(), 1], data)?;
        Ok(self.push(t, Op::Pick(a, idx.to_vec())))
    }

    /// Row-wise minimum; the gradient goes to the lowest-index minimiser.
    pub fn row_min(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut vals = Vec::with_capacity(av.rows());
        let mut arg = Vec::with_capacity(av.rows());
        for i in 0..av.rows() {
            let j = argmin(av.row_slice(i));
            arg.push(j);
            vals.push(av.get(i, j));
        }
        let t = Tensor::new(vec![vals.len(), 1], vals).expect("row count");
        self.push(t, Op::RowMin(a, arg))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let vals: Vec<f64> = (0..av.rows()).map(|i| av.row_slice(i).iter().sum()).collect();
        let t = Tensor::new(vec![vals.len(), 1], vals).expect("row count");
        self.push(t, Op::SumRows(a))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.is_empty() || idx.iter().any(|&i| i >= av.rows()) {
            return Err(Error::shape(
                "select_rows",
                format!("indices {idx:?} into {:?}", av.shape()),
            ));
        }
        let t = av.select_rows(idx);
        Ok(self.push(t, Op::SelectRows(a, idx.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Computes `∂loss/∂leaf` for every parameter leaf reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    if let Some(slot) = node.slot {
                        if out.by_slot.len() <= slot {
                            out.by_slot.resize(slot + 1, None);
                        }
                        match &mut out.by_slot[slot] {
                            Some(acc) => acc.add_assign(&g)?,
                            s @ None => *s = Some(g),
                        }
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                    // d(a·bᵀ)/da = g·b, d/db = gᵀ·a
                    let ga = matmul_nn(g.data(), bv.data(), n, m, k);
                    let gb = matmul_tn(g.data(), av.data(), n, m, k);
                    accum(&mut grads, *a, Tensor::new(vec![n, k], ga)?)?;
                    accum(&mut grads, *b, Tensor::new(vec![m, k], gb)?)?;
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Add(..)) { 1.0 } else { -1.0 };
                    let bv = self.value(*b);
                    let gb = reduce_broadcast(&g, bv, |_, gi| sign * gi);
                    accum(&mut grads, *a, g)?;
                    accum(&mut grads, *b, gb)?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let cols = av.cols();
                    let ga: Vec<f64> = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi * bv.data()[broadcast_index(bv, cols, i)])
                        .collect();
                    let gb = reduce_broadcast(&g, bv, |i, gi| gi * av.data()[i]);
                    accum(&mut grads, *a, Tensor::new(av.shape().to_vec(), ga)?)?;
                    accum(&mut grads, *b, gb)?;
                }
                Op::Scale(a, c) => {
                    let mut ga = g;
                    ga.data_mut().iter_mut().for_each(|x| *x *= c);
                    accum(&mut grads, *a, ga)?;
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let mut ga = g;
                    for (gi, x) in ga.data_mut().iter_mut().zip(av.data()) {
                        if *x <= 0.0 {
                            *gi = 0.0;
                        }
                    }
                    accum(&mut grads, *a, ga)?;
                }
                Op::Exp(a) => {
                    let mut ga = g;
                    for (gi, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                        *gi *= y;
                    }
                    accum(&mut grads, *a, ga)?;
                }
                Op::LogSoftmax(a) => {
                    // dx = g - softmax · Σg
                    let y = &node.value;
                    let c = y.cols();
                    let mut ga = g;
                    for (grow, yrow) in ga.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                        let s: f64 = grow.iter().sum();
                        for (gi, yi) in grow.iter_mut().zip(yrow) {
                            *gi -= yi.exp() * s;
                        }
                    }
                    accum(&mut grads, *a, ga)?;
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let r = g.rows();
                    let mut ga = Vec::with_capacity(r * ca);
                    let mut gb = Vec::with_capacity(r * cb);
                    for i in 0..r {
                        let row = g.row_slice(i);
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    accum(&mut grads, *a, Tensor::new(vec![r, ca], ga)?)?;
                    accum(&mut grads, *b, Tensor::new(vec![r, cb], gb)?)?;
                }
                Op::Pick(a, idx) | Op::RowMin(a, idx) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(&[av.rows(), av.cols()]);
                    let c = av.cols();
                    for (i, &j) in idx.iter().enumerate() {
                        ga.data_mut()[i * c + j] += g.data()[i];
                    }
                    accum(&mut grads, *a, ga)?;
                }
                Op::SumRows(a) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let data = (0..av.len()).map(|i| g.data()[i / c]).collect();
                    accum(&mut grads, *a, Tensor::new(av.shape().to_vec(), data)?)?;
                }
                Op::SelectRows(a, idx) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut ga = Tensor::zeros(&[av.rows(), c]);
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            ga.data_mut()[i * c + j] += g.get(k, j);
                        }
                    }
                    accum(&mut grads, *a, ga)?;
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let av = self.value(*a);
                    let scale = if matches!(node.op, Op::Mean(_)) {
                        1.0 / av.len() as f64
                    } else {
                        1.0
                    };
                    let ga = Tensor::full(&[av.rows(), av.cols()], g.item() * scale);
                    accum(&mut grads, *a, ga)?;
                }
            }
        }
        Ok(out)
    }
}

fn accum(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        s @ None => {
            *s = Some(g);
            Ok(())
        }
    }
}

/// Sums an upstream gradient back down to the (possibly broadcast) shape of `b`.
fn reduce_broadcast(g: &Tensor, b: &Tensor, f: impl Fn(usize, f64) -> f64) -> Tensor {
    let cols = g.cols();
    let mut out = Tensor::zeros(&[b.rows(), b.cols()]);
    for (i, &gi) in g.data().iter().enumerate() {
        out.data_mut()[broadcast_index(b, cols, i)] += f(i, gi);
    }
    out
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Lowest index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Lowest index of the minimum.
pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::State(_))));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(0, &Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::State(_))));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmin(&[0.0, -2.0, -2.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(0, &Tensor::row(&[1.0, -2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(0).unwrap().data(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap());
        let b = tape.param(0, &Tensor::row(&[0.5, -0.5]));
        let s = tape.param(1, &Tensor::scalar(2.0));
        let y = tape.add(a, b).unwrap();
        let y = tape.sub(y, s).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(0).unwrap().data(), &[3.0, 3.0]);
        assert_eq!(g.get(1).unwrap().data(), &[-6.0]);
    }
}
