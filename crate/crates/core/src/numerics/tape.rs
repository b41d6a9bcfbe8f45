//! Eager reverse-mode differentiation over [`Tensor`] values.
//!
//! Every primitive computes its forward value when recorded. `backward`
//! walks the tape from the loss node down to index 0, so accumulation order
//! is fixed by node order and results are bit-reproducible.

use std::borrow::Cow;

use super::tensor::{gemm, softmax_into, Tensor};
use super::NumericsError;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable primitives. Inputs are passed separately to [`Tape::apply`].
///
/// | primitive    | inputs                      | output |
/// |--------------|-----------------------------|--------|
/// | `Add`, `Mul` | `a`, `b` (b's shape a suffix of a's) | shape of `a` |
/// | `Scale`      | `a`                         | shape of `a` |
/// | `MatMul`     | `a: [m,k]`, `b: [k,n]` or `[n,k]` | `[m,n]` |
/// | `Embedding`  | `table: [V,d]`              | `[ids.len(), d]` |
/// | `LayerNorm`  | `x`, `gamma: [d]`, `beta: [d]` | shape of `x` |
/// | `Gelu`, `Softmax`, `LogSoftmax` | `a`      | shape of `a` (last axis) |
/// | `Reshape`    | `a`                         | `shape` |
/// | `Slice`      | `a`                         | `a` with `axis` narrowed |
/// | `Concat`     | `a, b, ...`                 | joined along `axis` |
/// | `Sum`, `Mean`| `a`                         | scalar or `axis` removed |
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Mul,
    Scale(f64),
    MatMul {
        transpose_rhs: bool,
    },
    Embedding {
        ids: Vec<usize>,
    },
    LayerNorm,
    Gelu,
    Softmax,
    LogSoftmax,
    Reshape {
        shape: Vec<usize>,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Concat {
        axis: usize,
    },
    Sum {
        axis: Option<usize>,
    },
    Mean {
        axis: Option<usize>,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Mul => "multiply",
            Primitive::Scale(_) => "scale",
            Primitive::MatMul { .. } => "matmul",
            Primitive::Embedding { .. } => "embedding-lookup",
            Primitive::LayerNorm => "layer-norm",
            Primitive::Gelu => "gelu",
            Primitive::Softmax => "softmax",
            Primitive::LogSoftmax => "log-softmax",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Slice { .. } => "slice",
            Primitive::Concat { .. } => "concat",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add {
        lhs: usize,
        rhs: usize,
    },
    Mul {
        lhs: usize,
        rhs: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    MatMul {
        lhs: usize,
        rhs: usize,
        transpose_rhs: bool,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    LayerNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        input: usize,
    },
    Softmax {
        input: usize,
    },
    LogSoftmax {
        input: usize,
    },
    Reshape {
        input: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Sum {
        input: usize,
        axis: Option<usize>,
    },
    Mean {
        input: usize,
        axis: Option<usize>,
    },
    /// Scalar computed outside the tape with a known local gradient.
    Loss {
        input: usize,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node<'a> {
    op: Op,
    value: Cow<'a, Tensor>,
}

/// Append-only record of primitive applications.
///
/// Leaves may borrow their values (`param`) so model weights are not copied
/// per forward pass.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Per-node gradients from one backward pass. Nodes the loss does not
/// depend on have no entry (`None`), not a zero tensor.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like `like` when absent.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn is_suffix(big: &[usize], small: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Leaf borrowing an existing tensor (model parameters).
    pub fn param(&mut self, value: &'a Tensor) -> NodeId {
        self.push(Op::Leaf, Cow::Borrowed(value))
    }

    /// Leaf owning its value (inputs, masks, constants).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, Cow::Owned(value))
    }

    fn push(&mut self, op: Op, value: Cow<'a, Tensor>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<&Tensor, NumericsError> {
        self.nodes
            .get(id.0)
            .map(|n| n.value.as_ref())
            .ok_or(NumericsError::UnknownNode(id.0))
    }

    fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }
    }

    fn arity(prim: &Primitive, inputs: &[NodeId], n: usize) -> Result<(), NumericsError> {
        if inputs.len() != n {
            return Err(NumericsError::Arity {
                op: prim.name(),
                expected: n,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    /// Records `prim` applied to `inputs`, computing its value eagerly.
    pub fn apply(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId, NumericsError> {
        for &id in inputs {
            self.check(id)?;
        }
        let name = prim.name();
        match prim {
            Primitive::Add | Primitive::Mul => {
                Self::arity(&prim, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if !is_suffix(a.shape(), b.shape()) {
                    return Err(Self::mismatch(name, a, b));
                }
                let bl = b.len();
                let is_add = prim == Primitive::Add;
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let y = b.data()[i % bl];
                        if is_add {
                            x + y
                        } else {
                            x * y
                        }
                    })
                    .collect();
                let out = Tensor::new(a.shape().to_vec(), data)?;
                let (lhs, rhs) = (inputs[0].0, inputs[1].0);
                let op = if is_add {
                    Op::Add { lhs, rhs }
                } else {
                    Op::Mul { lhs, rhs }
                };
                Ok(self.push(op, Cow::Owned(out)))
            }
            Primitive::Scale(factor) => {
                Self::arity(&prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let data = a.data().iter().map(|x| x * factor).collect();
                let out = Tensor::new(a.shape().to_vec(), data)?;
                Ok(self.push(
                    Op::Scale {
                        input: inputs[0].0,
                        factor,
                    },
                    Cow::Owned(out),
                ))
            }
            Primitive::MatMul { transpose_rhs } => {
                Self::arity(&prim, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.rank() != 2 || b.rank() != 2 {
                    return Err(Self::mismatch(name, a, b));
                }
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let (bk, n) = if transpose_rhs {
                    (b.shape()[1], b.shape()[0])
                } else {
                    (b.shape()[0], b.shape()[1])
                };
                if k != bk {
                    return Err(Self::mismatch(name, a, b));
                }
                let mut out = vec![0.0; m * n];
                gemm(
                    m,
                    k,
                    n,
                    a.data(),
                    false,
                    b.data(),
                    transpose_rhs,
                    &mut out,
                    false,
                );
                let out = Tensor::matrix(m, n, out)?;
                let op = Op::MatMul {
                    lhs: inputs[0].0,
                    rhs: inputs[1].0,
                    transpose_rhs,
                };
                Ok(self.push(op, Cow::Owned(out)))
            }
            Primitive::Embedding { ids } => {
                Self::arity(&Primitive::Embedding { ids: Vec::new() }, inputs, 1)?;
                let table = self.value(inputs[0]);
                if table.rank() != 2 {
                    return Err(NumericsError::InvalidShape(format!(
                        "embedding-lookup table must be rank 2, got {:?}",
                        table.shape()
                    )));
                }
                if ids.is_empty() {
                    return Err(NumericsError::InvalidArgument(
                        "embedding-lookup needs at least one id".into(),
                    ));
                }
                let (v, d) = (table.shape()[0], table.shape()[1]);
                let mut out = Vec::with_capacity(ids.len() * d);
                for &id in &ids {
                    if id >= v {
                        return Err(NumericsError::IndexOutOfRange {
                            op: name,
                            index: id,
                            bound: v,
                        });
                    }
                    out.extend_from_slice(table.row(id));
                }
                let out = Tensor::matrix(ids.len(), d, out)?;
                Ok(self.push(
                    Op::Embedding {
                        table: inputs[0].0,
                        ids,
                    },
                    Cow::Owned(out),
                ))
            }
            Primitive::LayerNorm => {
                Self::arity(&prim, inputs, 3)?;
                let (x, g, b) = (
                    self.value(inputs[0]),
                    self.value(inputs[1]),
                    self.value(inputs[2]),
                );
                let d = x.last_dim();
                if g.shape() != [d] {
                    return Err(Self::mismatch(name, x, g));
                }
                if b.shape() != [d] {
                    return Err(Self::mismatch(name, x, b));
                }
                let rows = x.rows();
                let mut normalized = vec![0.0; x.len()];
                let mut inv_std = vec![0.0; rows];
                let mut out = vec![0.0; x.len()];
                for r in 0..rows {
                    let row = x.row(r);
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_std[r] = rstd;
                    for j in 0..d {
                        let xh = (row[j] - mean) * rstd;
                        normalized[r * d + j] = xh;
                        out[r * d + j] = xh * g.data()[j] + b.data()[j];
                    }
                }
                let out = Tensor::new(x.shape().to_vec(), out)?;
                let op = Op::LayerNorm {
                    input: inputs[0].0,
                    gamma: inputs[1].0,
                    beta: inputs[2].0,
                    normalized,
                    inv_std,
                };
                Ok(self.push(op, Cow::Owned(out)))
            }
            Primitive::Gelu => {
                Self::arity(&prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let out = Tensor::new(
                    a.shape().to_vec(),
                    a.data().iter().map(|&x| gelu(x)).collect(),
                )?;
                Ok(self.push(Op::Gelu { input: inputs[0].0 }, Cow::Owned(out)))
            }
            Primitive::Softmax | Primitive::LogSoftmax => {
                Self::arity(&prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                let d = a.last_dim();
                let mut out = vec![0.0; a.len()];
                let log = prim == Primitive::LogSoftmax;
                for r in 0..a.rows() {
                    let row = a.row(r);
                    let dst = &mut out[r * d..(r + 1) * d];
                    if log {
                        let lse = super::tensor::log_sum_exp(row);
                        for (o, &z) in dst.iter_mut().zip(row) {
                            *o = z - lse;
                        }
                    } else {
                        softmax_into(row, dst);
                    }
                }
                let out = Tensor::new(a.shape().to_vec(), out)?;
                let input = inputs[0].0;
                let op = if log {
                    Op::LogSoftmax { input }
                } else {
                    Op::Softmax { input }
                };
                Ok(self.push(op, Cow::Owned(out)))
            }
            Primitive::Reshape { ref shape } => {
                Self::arity(&prim, inputs, 1)?;
                let shape = shape.clone();
                let a = self.value(inputs[0]);
                let out = Tensor::new(shape.clone(), a.data().to_vec()).map_err(|_| {
                    NumericsError::ShapeMismatch {
                        op: name,
                        lhs: a.shape().to_vec(),
                        rhs: shape,
                    }
                })?;
                Ok(self.push(Op::Reshape { input: inputs[0].0 }, Cow::Owned(out)))
            }
            Primitive::Slice { axis, start, len } => {
                Self::arity(&prim, inputs, 1)?;
                let a = self.value(inputs[0]);
                if axis >= a.rank() || len == 0 || start + len > a.shape()[axis] {
                    return Err(NumericsError::InvalidArgument(format!(
                        "slice axis {axis} [{start}, {}) out of bounds for shape {:?}",
                        start + len,
                        a.shape()
                    )));
                }
                let (outer, dim, inner) = axis_split(a.shape(), axis);
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    out.extend_from_slice(&a.data()[base..base + len * inner]);
                }
                let mut shape = a.shape().to_vec();
                shape[axis] = len;
                let out = Tensor::new(shape, out)?;
                Ok(self.push(
                    Op::Slice {
                        input: inputs[0].0,
                        axis,
                        start,
                    },
                    Cow::Owned(out),
                ))
            }
            Primitive::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(NumericsError::Arity {
                        op: name,
                        expected: 1,
                        got: 0,
                    });
                }
                let first = self.value(inputs[0]);
                if axis >= first.rank() {
                    return Err(NumericsError::InvalidArgument(format!(
                        "concat axis {axis} out of range for shape {:?}",
                        first.shape()
                    )));
                }
                let mut total = 0;
                for &id in inputs {
                    let t = self.value(id);
                    let compatible = t.rank() == first.rank()
                        && t.shape()
                            .iter()
                            .zip(first.shape())
                            .enumerate()
                            .all(|(i, (x, y))| i == axis || x == y);
                    if !compatible {
                        return Err(Self::mismatch(name, first, t));
                    }
                    total += t.shape()[axis];
                }
                let (outer, _, inner) = axis_split(first.shape(), axis);
                let mut out = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for &id in inputs {
                        let t = self.value(id);
                        let chunk = t.shape()[axis] * inner;
                        out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                    }
                }
                let mut shape = first.shape().to_vec();
                shape[axis] = total;
                let out = Tensor::new(shape, out)?;
                let op = Op::Concat {
                    inputs: inputs.iter().map(|i| i.0).collect(),
                    axis,
                };
                Ok(self.push(op, Cow::Owned(out)))
            }
            Primitive::Sum { axis } | Primitive::Mean { axis } => {
                Self::arity(&prim, inputs, 1)?;
                let mean = matches!(prim, Primitive::Mean { .. });
                let a = self.value(inputs[0]);
                let out = match axis {
                    None => {
                        let s: f64 = a.data().iter().sum();
                        Tensor::scalar(if mean { s / a.len() as f64 } else { s })
                    }
                    Some(axis) => {
                        if axis >= a.rank() {
                            return Err(NumericsError::InvalidArgument(format!(
                                "{name} axis {axis} out of range for shape {:?}",
                                a.shape()
                            )));
                        }
                        let (outer, dim, inner) = axis_split(a.shape(), axis);
                        let mut out = vec![0.0; outer * inner];
                        for o in 0..outer {
                            for k in 0..dim {
                                let src =
                                    &a.data()[(o * dim + k) * inner..(o * dim + k + 1) * inner];
                                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src)
                                {
                                    *dst += s;
                                }
                            }
                        }
                        if mean {
                            out.iter_mut().for_each(|v| *v /= dim as f64);
                        }
                        let mut shape = a.shape().to_vec();
                        shape.remove(axis);
                        Tensor::new(shape, out)?
                    }
                };
                let input = inputs[0].0;
                let op = if mean {
                    Op::Mean { input, axis }
                } else {
                    Op::Sum { input, axis }
                };
                Ok(self.push(op, Cow::Owned(out)))
            }
        }
    }

    /// Records a scalar whose value and local gradient were computed
    /// outside the tape (the closed-form loss functions).
    pub fn attach_loss(
        &mut self,
        input: NodeId,
        value: f64,
        grad: Tensor,
    ) -> Result<NodeId, NumericsError> {
        let x = self.check(input)?;
        if x.shape() != grad.shape() {
            return Err(Self::mismatch("loss", x, &grad));
        }
        Ok(self.push(
            Op::Loss {
                input: input.0,
                grad,
            },
            Cow::Owned(Tensor::scalar(value)),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Scale(factor), &[a])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(
            Primitive::MatMul {
                transpose_rhs: false,
            },
            &[a, b],
        )
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(
            Primitive::MatMul {
                transpose_rhs: true,
            },
            &[a, b],
        )
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Embedding { ids: ids.to_vec() }, &[table])
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    ) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::LayerNorm, &[x, gamma, beta])
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Gelu, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::LogSoftmax, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Reshape { shape }, &[a])
    }

    pub fn slice(
        &mut self,
        a: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Slice { axis, start, len }, &[a])
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Concat { axis }, inputs)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Sum { axis: None }, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Primitive::Mean { axis: None }, &[a])
    }

    /// Reverse pass from a scalar `loss` node. The tape is not modified, so
    /// repeated calls return identical gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumericsError> {
        let value = self.check(loss)?;
        if value.len() != 1 {
            return Err(NumericsError::NonScalarLoss(value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| -> &Tensor { &self.nodes[i].value };
        match &node.op {
            Op::Leaf => {}
            Op::Add { lhs, rhs } => {
                accumulate(grads, *lhs, g.clone());
                accumulate(grads, *rhs, reduce_to(g.data(), val(*rhs)));
            }
            Op::Mul { lhs, rhs } => {
                let (a, b) = (val(*lhs), val(*rhs));
                let bl = b.len();
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, gv)| gv * b.data()[i % bl])
                    .collect();
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(a.data())
                    .map(|(gv, av)| gv * av)
                    .collect();
                accumulate(grads, *lhs, Tensor::new(a.shape().to_vec(), ga).unwrap());
                accumulate(grads, *rhs, reduce_to(&gb, b));
            }
            Op::Scale { input, factor } => {
                let data = g.data().iter().map(|v| v * factor).collect();
                accumulate(
                    grads,
                    *input,
                    Tensor::new(g.shape().to_vec(), data).unwrap(),
                );
            }
            Op::MatMul {
                lhs,
                rhs,
                transpose_rhs,
            } => {
                let (a, b) = (val(*lhs), val(*rhs));
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = g.shape()[1];
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                if *transpose_rhs {
                    // C = A Bᵀ, B: [n,k]. dA = dC B, dB = dCᵀ A.
                    gemm(m, n, k, g.data(), false, b.data(), false, &mut ga, false);
                    gemm(n, m, k, g.data(), true, a.data(), false, &mut gb, false);
                } else {
                    // C = A B, B: [k,n]. dA = dC Bᵀ, dB = Aᵀ dC.
                    gemm(m, n, k, g.data(), false, b.data(), true, &mut ga, false);
                    gemm(k, m, n, a.data(), true, g.data(), false, &mut gb, false);
                }
                accumulate(grads, *lhs, Tensor::new(a.shape().to_vec(), ga).unwrap());
                accumulate(grads, *rhs, Tensor::new(b.shape().to_vec(), gb).unwrap());
            }
            Op::Embedding { table, ids } => {
                let t = val(*table);
                let d = t.shape()[1];
                let mut gt = Tensor::zeros(t.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (dst, src) in gt.row_mut(id).iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                        *dst += src;
                    }
                }
                accumulate(grads, *table, gt);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let x = val(*input);
                let gam = val(*gamma);
                let d = x.last_dim();
                let mut gx = vec![0.0; x.len()];
                let mut gg = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for (r, &rstd) in inv_std.iter().enumerate() {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let xh = &normalized[r * d..(r + 1) * d];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..d {
                        gg[j] += gr[j] * xh[j];
                        gbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gam.data()[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xh[j];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for j in 0..d {
                        gx[r * d + j] = rstd * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
                    }
                }
                accumulate(grads, *input, Tensor::new(x.shape().to_vec(), gx).unwrap());
                accumulate(grads, *gamma, Tensor::vector(gg));
                accumulate(grads, *beta, Tensor::vector(gbeta));
            }
            Op::Gelu { input } => {
                let x = val(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, gv)| gv * gelu_grad(xv))
                    .collect();
                accumulate(
                    grads,
                    *input,
                    Tensor::new(x.shape().to_vec(), data).unwrap(),
                );
            }
            Op::Softmax { input } => {
                let y = &node.value;
                let d = y.last_dim();
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *input, Tensor::new(y.shape().to_vec(), gx).unwrap());
            }
            Op::LogSoftmax { input } => {
                let y = &node.value;
                let d = y.last_dim();
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let total: f64 = gr.iter().sum();
                    for j in 0..d {
                        gx[r * d + j] = gr[j] - yr[j].exp() * total;
                    }
                }
                accumulate(grads, *input, Tensor::new(y.shape().to_vec(), gx).unwrap());
            }
            Op::Reshape { input } => {
                let shape = val(*input).shape().to_vec();
                accumulate(
                    grads,
                    *input,
                    Tensor::new(shape, g.data().to_vec()).unwrap(),
                );
            }
            Op::Slice { input, axis, start } => {
                let x = val(*input);
                let (outer, dim, inner) = axis_split(x.shape(), *axis);
                let len = g.shape()[*axis];
                let mut gx = Tensor::zeros(x.shape());
                for o in 0..outer {
                    let dst = o * dim * inner + start * inner;
                    let src = o * len * inner;
                    for (d, s) in gx.data_mut()[dst..dst + len * inner]
                        .iter_mut()
                        .zip(&g.data()[src..src + len * inner])
                    {
                        *d += s;
                    }
                }
                accumulate(grads, *input, gx);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &i in inputs {
                    let x = val(i);
                    let len = x.shape()[*axis];
                    let mut gx = Vec::with_capacity(x.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gx.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    accumulate(grads, i, Tensor::new(x.shape().to_vec(), gx).unwrap());
                    offset += len;
                }
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let x = val(*input);
                let mean = matches!(node.op, Op::Mean { .. });
                let gx = match axis {
                    None => {
                        let gv = g.data()[0] / if mean { x.len() as f64 } else { 1.0 };
                        Tensor::full(x.shape(), gv)
                    }
                    Some(axis) => {
                        let (outer, dim, inner) = axis_split(x.shape(), *axis);
                        let div = if mean { dim as f64 } else { 1.0 };
                        let mut out = vec![0.0; x.len()];
                        for o in 0..outer {
                            for k in 0..dim {
                                let dst =
                                    &mut out[(o * dim + k) * inner..(o * dim + k + 1) * inner];
                                for (d, s) in
                                    dst.iter_mut().zip(&g.data()[o * inner..(o + 1) * inner])
                                {
                                    *d = s / div;
                                }
                            }
                        }
                        Tensor::new(x.shape().to_vec(), out).unwrap()
                    }
                };
                accumulate(grads, *input, gx);
            }
            Op::Loss { input, grad } => {
                let s = g.data()[0];
                let data = grad.data().iter().map(|v| v * s).collect();
                accumulate(
                    grads,
                    *input,
                    Tensor::new(grad.shape().to_vec(), data).unwrap(),
                );
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sums a broadcast gradient back onto the (suffix) shape of `target`.
fn reduce_to(g: &[f64], target: &Tensor) -> Tensor {
    let n = target.len();
    let mut out = vec![0.0; n];
    for chunk in g.chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::new(target.shape().to_vec(), out).unwrap()
}
