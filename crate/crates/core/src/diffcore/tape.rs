//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its value and the indices of its
//! parents, so node order is a topological order. [`Tape::backward`] consumes
//! the tape and walks it once in reverse.

use super::activation::Activation;
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{LabError, Result};
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

/// How the second operand of a binary op is broadcast against the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
    Col,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Div(usize, usize, Broadcast),
    Scale(usize, f64),
    AddScalar(usize),
    Act(usize, Activation),
    Log(usize),
    Exp(usize),
    Erf(usize),
    Square(usize),
    Sqrt(usize),
    ClampMin(usize, f64),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    Reshape(usize),
    Column(usize, usize),
    ConcatRows(usize, usize),
    SliceRows(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.idx >= self.grads.len() {
            return Err(LabError::UnknownVariable);
        }
        Ok(self.grads[v.idx]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.idx])))
    }
}

fn shape_err<T>(op: &'static str, detail: String) -> Result<T> {
    Err(LabError::Shape { op, detail })
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(LabError::UnknownVariable);
        }
        Ok(v.idx)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Records a differentiable input.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return shape_err(
                "matmul",
                format!("cannot multiply {:?} by {:?}", av.shape(), bv.shape()),
            );
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let out = Tensor::new(vec![n, m], matmul(av.data(), bv.data(), n, k, m))?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::MatMul(ia, ib), rg))
    }

    fn broadcast_kind(&self, op: &'static str, ia: usize, ib: usize) -> Result<Broadcast> {
        let (a, b) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if a.shape() == b.shape() {
            return Ok(Broadcast::Same);
        }
        if b.len() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if a.shape().len() == 2 {
            let (n, m) = (a.rows(), a.cols());
            let bs = b.shape();
            if (bs.len() == 1 && bs[0] == m) || (bs.len() == 2 && bs[0] == 1 && bs[1] == m) {
                return Ok(Broadcast::Row);
            }
            if bs.len() == 2 && bs[0] == n && bs[1] == 1 {
                return Ok(Broadcast::Col);
            }
        }
        shape_err(op, format!("cannot broadcast {:?} against {:?}", b.shape(), a.shape()))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let bc = self.broadcast_kind(name, ia, ib)?;
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let m = av.cols();
        let out_data: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(idx, &x)| {
                let y = match bc {
                    Broadcast::Same => bv.data()[idx],
                    Broadcast::Scalar => bv.data()[0],
                    Broadcast::Row => bv.data()[idx % m],
                    Broadcast::Col => bv.data()[idx / m],
                };
                f(x, y)
            })
            .collect();
        let out = Tensor::new(av.shape().to_vec(), out_data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, mk(ia, ib, bc), rg))
    }

    /// Elementwise `a + b`; `b` may be a scalar, a row or a column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl Fn(usize) -> Op) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(f);
        let rg = self.rg(ia);
        Ok(self.push(out, op(ia), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| c * x, |i| Op::Scale(i, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        self.unary(a, |x| act.apply(x), |i| Op::Act(i, act))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn erf(&mut self, a: Var) -> Result<Var> {
        self.unary(a, statrs::function::erf::erf, Op::Erf)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::sqrt, Op::Sqrt)
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.unary(a, |x| x.max(floor), |i| Op::ClampMin(i, floor))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = Tensor::scalar(self.nodes[ia].value.sum());
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Sum(ia), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Mean(ia), rg))
    }

    /// Row sums: `(n, m) -> (n, 1)`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let n = v.rows();
        let data = (0..n).map(|i| v.row(i).iter().sum()).collect();
        let out = Tensor::new(vec![n, 1], data)?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::SumCols(ia), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.clone().reshape(shape)?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Reshape(ia), rg))
    }

    /// Column `j` of a matrix as `(n, 1)`.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if j >= v.cols() {
            return shape_err("column", format!("column {j} out of range for {:?}", v.shape()));
        }
        let n = v.rows();
        let data = (0..n).map(|i| v.at(i, j)).collect();
        let out = Tensor::new(vec![n, 1], data)?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::Column(ia, j), rg))
    }

    /// Stacks two matrices with equal column counts.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.cols() {
            return shape_err(
                "concat_rows",
                format!("cannot stack {:?} on {:?}", bv.shape(), av.shape()),
            );
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let out = Tensor::new(vec![av.rows() + bv.rows(), av.cols()], data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(out, Op::ConcatRows(ia, ib), rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if v.shape().len() != 2 || start >= end || end > v.rows() {
            return shape_err(
                "slice_rows",
                format!("rows {start}..{end} out of range for {:?}", v.shape()),
            );
        }
        let m = v.cols();
        let out = Tensor::new(vec![end - start, m], v.data()[start * m..end * m].to_vec())?;
        let rg = self.rg(ia);
        Ok(self.push(out, Op::SliceRows(ia, start), rg))
    }

    /// Reverse pass from a scalar loss. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        let shape = self.nodes[il].value.shape().to_vec();
        if !self.nodes[il].value.is_scalar() {
            return Err(LabError::NonScalarLoss(shape));
        }
        self.vjp(loss, Tensor::full(&shape, 1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back
    /// to every node. Leaves the tape intact so Jacobians can be assembled row
    /// by row from one recording.
    pub fn vjp(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        let io = self.check(output)?;
        if seed.shape() != self.nodes[io].value.shape() {
            return shape_err(
                "vjp",
                format!(
                    "seed {:?} does not match output {:?}",
                    seed.shape(),
                    self.nodes[io].value.shape()
                ),
            );
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[io] = Some(seed);
        for i in (0..=io).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        let mut acc = |j: usize, t: Tensor| {
            if !self.nodes[j].requires_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.rg(a) {
                    let ga = matmul_nt(g.data(), bv.data(), n, m, k);
                    acc(a, Tensor::new(vec![n, k], ga).expect("shape"));
                }
                if self.rg(b) {
                    let gb = matmul_tn(av.data(), g.data(), n, k, m);
                    acc(b, Tensor::new(vec![k, m], gb).expect("shape"));
                }
            }
            Op::Add(a, b, bc) => {
                acc(a, g.clone());
                if self.rg(b) {
                    acc(b, reduce_broadcast(g, val(b), bc));
                }
            }
            Op::Sub(a, b, bc) => {
                acc(a, g.clone());
                if self.rg(b) {
                    acc(b, reduce_broadcast(&g.map(|x| -x), val(b), bc));
                }
            }
            Op::Mul(a, b, bc) => {
                let (av, bv) = (val(a), val(b));
                if self.rg(a) {
                    let ga = expand(bv, av, bc).zip_map(g, |y, gi| y * gi);
                    acc(a, ga);
                }
                if self.rg(b) {
                    let gb = av.zip_map(g, |x, gi| x * gi);
                    acc(b, reduce_broadcast(&gb, bv, bc));
                }
            }
            Op::Div(a, b, bc) => {
                let (av, bv) = (val(a), val(b));
                let be = expand(bv, av, bc);
                if self.rg(a) {
                    acc(a, be.zip_map(g, |y, gi| gi / y));
                }
                if self.rg(b) {
                    // d(x/y)/dy = -x / y^2 = -(x/y) / y
                    let q = &node.value;
                    let t = q.zip_map(&be, |qi, y| -qi / y).zip_map(g, |t, gi| t * gi);
                    acc(b, reduce_broadcast(&t, bv, bc));
                }
            }
            Op::Scale(a, c) => acc(a, g.map(|x| c * x)),
            Op::AddScalar(a) => acc(a, g.clone()),
            Op::Act(a, act) => {
                let d = act.derivative_tensor(val(a), &node.value);
                acc(a, d.zip_map(g, |di, gi| di * gi));
            }
            Op::Log(a) => acc(a, val(a).zip_map(g, |x, gi| gi / x)),
            Op::Exp(a) => acc(a, node.value.zip_map(g, |y, gi| y * gi)),
            Op::Erf(a) => {
                let c = 2.0 / std::f64::consts::PI.sqrt();
                acc(a, val(a).zip_map(g, |x, gi| c * (-x * x).exp() * gi));
            }
            Op::Square(a) => acc(a, val(a).zip_map(g, |x, gi| 2.0 * x * gi)),
            Op::Sqrt(a) => acc(a, node.value.zip_map(g, |y, gi| 0.5 * gi / y)),
            Op::ClampMin(a, floor) => acc(a, val(a).zip_map(g, |x, gi| if x > floor { gi } else { 0.0 })),
            Op::Sum(a) => acc(a, Tensor::full(val(a).shape(), g.item())),
            Op::Mean(a) => {
                let n = val(a).len() as f64;
                acc(a, Tensor::full(val(a).shape(), g.item() / n));
            }
            Op::SumCols(a) => {
                let av = val(a);
                let m = av.cols();
                let data = (0..av.len()).map(|idx| g.data()[idx / m]).collect();
                acc(a, Tensor::new(av.shape().to_vec(), data).expect("shape"));
            }
            Op::Reshape(a) => {
                acc(a, g.clone().reshape(val(a).shape().to_vec()).expect("shape"));
            }
            Op::Column(a, j) => {
                let av = val(a);
                let mut t = Tensor::zeros(av.shape());
                let m = av.cols();
                for r in 0..av.rows() {
                    t.data_mut()[r * m + j] = g.data()[r];
                }
                acc(a, t);
            }
            Op::ConcatRows(a, b) => {
                let na = val(a).len();
                if self.rg(a) {
                    let ga = Tensor::new(val(a).shape().to_vec(), g.data()[..na].to_vec());
                    acc(a, ga.expect("shape"));
                }
                if self.rg(b) {
                    let gb = Tensor::new(val(b).shape().to_vec(), g.data()[na..].to_vec());
                    acc(b, gb.expect("shape"));
                }
            }
            Op::SliceRows(a, start) => {
                let av = val(a);
                let m = av.cols();
                let mut t = Tensor::zeros(av.shape());
                t.data_mut()[start * m..start * m + g.len()].copy_from_slice(g.data());
                acc(a, t);
            }
        }
    }
}

/// Broadcasts `b` up to the shape of `a`.
fn expand(b: &Tensor, a: &Tensor, bc: Broadcast) -> Tensor {
    match bc {
        Broadcast::Same => b.clone(),
        Broadcast::Scalar => Tensor::full(a.shape(), b.data()[0]),
        Broadcast::Row => {
            let m = a.cols();
            let data = (0..a.len()).map(|i| b.data()[i % m]).collect();
            Tensor::new(a.shape().to_vec(), data).expect("shape")
        }
        Broadcast::Col => {
            let m = a.cols();
            let data = (0..a.len()).map(|i| b.data()[i / m]).collect();
            Tensor::new(a.shape().to_vec(), data).expect("shape")
        }
    }
}

/// Sums a full-size gradient back down to the broadcast operand's shape.
fn reduce_broadcast(g: &Tensor, b: &Tensor, bc: Broadcast) -> Tensor {
    match bc {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Tensor::full(b.shape(), g.sum()),
        Broadcast::Row => {
            let m = g.cols();
            let mut out = vec![0.0; m];
            for (i, &x) in g.data().iter().enumerate() {
                out[i % m] += x;
            }
            Tensor::new(b.shape().to_vec(), out).expect("shape")
        }
        Broadcast::Col => {
            let m = g.cols();
            let mut out = vec![0.0; g.rows()];
            for (i, &x) in g.data().iter().enumerate() {
                out[i / m] += x;
            }
            Tensor::new(b.shape().to_vec(), out).expect("shape")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.var(Tensor::vector(vec![1.0, -2.0, 3.5]));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut t = Tape::new();
        let x = t.var(Tensor::vector(vec![3.0, 4.0]));
        let sq = t.square(x).unwrap();
        let s = t.sum(sq).unwrap();
        let l = t.scale(s, 0.5).unwrap();
        assert_eq!(t.value(l).unwrap().item(), 12.5);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.var(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(LabError::NonScalarLoss(_))));
    }

    #[test]
    fn foreign_variable_is_rejected() {
        let mut other = Tape::new();
        let x = other.var(Tensor::scalar(1.0));
        let t = Tape::new();
        assert!(matches!(t.backward(x), Err(LabError::UnknownVariable)));
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let mut t = Tape::new();
        let m = t.var(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let r = t.var(Tensor::vector(vec![10.0, 20.0]));
        let c = t.var(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let s = t.var(Tensor::scalar(2.0));
        let a = t.sub(m, r).unwrap();
        let b = t.mul(a, c).unwrap();
        let d = t.div(b, s).unwrap();
        let l = t.sum(d).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(m).unwrap().data(), &[0.5, 0.5, 1.0, 1.0]);
        assert_eq!(g.wrt(r).unwrap().data(), &[-1.5, -1.5]);
        // row sums of (m - r) / 2
        assert_eq!(g.wrt(c).unwrap().data(), &[-13.5, -11.5]);
        // -sum(b) / s^2
        let bsum = (-9.0 - 18.0) + 2.0 * (-7.0 - 16.0);
        assert_eq!(g.wrt(s).unwrap().data(), &[-bsum / 4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0]));
        let y = t.var(Tensor::vector(vec![2.0]));
        let p = t.mul(x, y).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0]);
        assert_eq!(g.wrt(y).unwrap().data(), &[1.0]);
    }
}
