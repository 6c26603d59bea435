use rand::Rng;

use super::kernels::{gemm, MatRef};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

/// How a dropout node behaves.
///
/// `Train` and `Mc` both draw a fresh mask; they are kept apart so call
/// sites say which of the two they mean. `Infer` is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Infer,
    Mc,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Unary(UnaryOp, Var),
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Reduce {
        op: ReduceOp,
        input: Var,
        outer: usize,
        len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    Reshape(Var),
    Pick {
        input: Var,
        index: usize,
    },
    Bce {
        input: Var,
        target: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Lower clamp bound used by [`Graph::bce`]; the upper bound is `1 - BCE_CLAMP`.
pub const BCE_CLAMP: f64 = 1e-7;

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Dimension(format!(
                "matmul of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::row_major(ta.data(), m, k),
            MatRef::row_major(tb.data(), k, n),
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.ndim() != 2 || tb.ndim() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not fit rows of {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let n = tb.len();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!(
                "elementwise op on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())
            .expect("shape preserved");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Var {
        let t = self.value(x);
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Relu => |v| if v > 0.0 { v } else { 0.0 },
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Tanh => f64::tanh,
        };
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("shape preserved");
        let rg = self.rg(x);
        self.push(value, Op::Unary(op, x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Tanh, x)
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` so that `Infer`
    /// mode can return `x` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if mode == DropoutMode::Infer || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { input: x, mask }, rg))
    }

    /// Reduces along `axis`, or over every element when `axis` is `None`.
    ///
    /// `Max` routes the gradient to the first maximal element in storage
    /// order.
    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner, out_shape) = match axis {
            None => (1, t.len(), 1, Vec::new()),
            Some(a) if a < t.ndim() => {
                let s = t.shape();
                let mut out_shape = s.to_vec();
                out_shape.remove(a);
                (
                    s[..a].iter().product(),
                    s[a],
                    s[a + 1..].iter().product(),
                    out_shape,
                )
            }
            Some(a) => {
                return Err(Error::Dimension(format!(
                    "axis {a} out of range for shape {:?}",
                    t.shape()
                )))
            }
        };
        if len == 0 {
            return Err(Error::Dimension(format!(
                "reduction over an empty axis of shape {:?}",
                t.shape()
            )));
        }
        let data = t.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        if op == ReduceOp::Max {
            argmax = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| data[(o * len + j) * inner + i];
                let slot = o * inner + i;
                match op {
                    ReduceOp::Sum => out[slot] = (0..len).map(at).sum(),
                    ReduceOp::Mean => out[slot] = (0..len).map(at).sum::<f64>() / len as f64,
                    ReduceOp::Max => {
                        let mut best = 0;
                        for j in 1..len {
                            if at(j) > at(best) {
                                best = j;
                            }
                        }
                        argmax[slot] = best;
                        out[slot] = at(best);
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::Reduce {
                op,
                input: x,
                outer,
                len,
                inner,
                argmax,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, None)
    }

    pub fn max(&mut self, x: Var) -> Result<Var> {
        self.reduce(ReduceOp::Max, x, None)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.shape().last().copied().unwrap_or(1);
        if n == 0 {
            return Err(Error::Dimension("softmax over an empty axis".into()));
        }
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Scalar holding element `index` (flat, row-major) of `x`.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let t = self.value(x);
        let v = *t.data().get(index).ok_or_else(|| {
            Error::Dimension(format!(
                "index {index} out of range for shape {:?}",
                t.shape()
            ))
        })?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::Pick { input: x, index }, rg))
    }

    /// Binary cross-entropy of a probability against a 0/1 target.
    ///
    /// The probability is clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` in both
    /// the loss and its derivative; the derivative is not masked outside the
    /// clamp range, so a saturated wrong prediction still gets pushed back.
    pub fn bce(&mut self, z: Var, target: f64) -> Result<Var> {
        let p = self.value(z).item()?;
        if target != 0.0 && target != 1.0 {
            return Err(Error::Parameter(format!(
                "bce target must be 0 or 1, got {target}"
            )));
        }
        let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let loss = -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
        let rg = self.rg(z);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { input: z, target }, rg))
    }

    /// Runs the backward pass from a single-element `loss`, consuming the
    /// graph. Gradients are reported for every parameter leaf reached.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let Graph { nodes } = self;
        if nodes.is_empty() || loss.0 >= nodes.len() {
            return Err(Error::Contract("backward on an empty graph".into()));
        }
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "loss must be a scalar, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(buf);
            };
            let out = node.value.data();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let gm = MatRef::row_major(&g, m, n);
                    acc(*a, &mut |da| {
                        gemm(gm, MatRef::row_major(tb.data(), k, n).t(), da, true)
                    });
                    acc(*b, &mut |db| {
                        gemm(MatRef::row_major(ta.data(), m, k).t(), gm, db, true)
                    });
                }
                Op::AddBias(x, b) => {
                    let n = nodes[b.0].value.len();
                    acc(*x, &mut |dx| add_into(dx, &g));
                    acc(*b, &mut |db| {
                        for row in g.chunks(n) {
                            add_into(db, row);
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |da| add_into(da, &g));
                    acc(*b, &mut |db| add_into(db, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |da| add_into(da, &g));
                    acc(*b, &mut |db| {
                        for (d, gv) in db.iter_mut().zip(&g) {
                            *d -= gv;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |da| {
                        for ((d, gv), y) in da.iter_mut().zip(&g).zip(vb) {
                            *d += gv * y;
                        }
                    });
                    acc(*b, &mut |db| {
                        for ((d, gv), x) in db.iter_mut().zip(&g).zip(va) {
                            *d += gv * x;
                        }
                    });
                }
                Op::Scale(a, c) => acc(*a, &mut |da| {
                    for (d, gv) in da.iter_mut().zip(&g) {
                        *d += c * gv;
                    }
                }),
                Op::Unary(op, x) => acc(*x, &mut |dx| {
                    for ((d, gv), y) in dx.iter_mut().zip(&g).zip(out) {
                        *d += gv
                            * match op {
                                UnaryOp::Relu => {
                                    if *y > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryOp::Sigmoid => y * (1.0 - y),
                                UnaryOp::Tanh => 1.0 - y * y,
                            };
                    }
                }),
                Op::Dropout { input, mask } => acc(*input, &mut |dx| {
                    for ((d, gv), m) in dx.iter_mut().zip(&g).zip(mask) {
                        *d += gv * m;
                    }
                }),
                Op::Reduce {
                    op,
                    input,
                    outer,
                    len,
                    inner,
                    argmax,
                } => acc(*input, &mut |dx| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let slot = o * inner + i;
                            let gv = g[slot];
                            match op {
                                ReduceOp::Sum | ReduceOp::Mean => {
                                    let w = if *op == ReduceOp::Mean {
                                        gv / *len as f64
                                    } else {
                                        gv
                                    };
                                    for j in 0..*len {
                                        dx[(o * len + j) * inner + i] += w;
                                    }
                                }
                                ReduceOp::Max => dx[(o * len + argmax[slot]) * inner + i] += gv,
                            }
                        }
                    }
                }),
                Op::Softmax(x) => {
                    let n = node.value.shape().last().copied().unwrap_or(1);
                    acc(*x, &mut |dx| {
                        for ((drow, grow), yrow) in
                            dx.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n))
                        {
                            let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                            for ((d, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += y * (gv - dot);
                            }
                        }
                    })
                }
                Op::Reshape(x) => acc(*x, &mut |dx| add_into(dx, &g)),
                Op::Pick { input, index } => acc(*input, &mut |dx| dx[*index] += g[0]),
                Op::Bce { input, target } => {
                    let p = nodes[input.0].value.data()[0].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    let d = -(target / p) + (1.0 - target) / (1.0 - p);
                    acc(*input, &mut |dz| dz[0] += g[0] * d);
                }
            }
        }

        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a parameter leaf; `None` when the loss does not depend
    /// on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
