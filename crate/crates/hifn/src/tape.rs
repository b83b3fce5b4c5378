//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] borrows a [`Params`] registry, records every operation executed
//! during one forward pass, and replays the record backwards to produce exact
//! reverse-mode gradients. One tape covers one forward pass; it is dropped
//! (not reused) after backward. Parameter data is never copied onto the tape —
//! leaf nodes reference the registry, and gradient contributions land in an
//! external [`GradStore`] so that many per-sample tapes can accumulate into
//! one batch gradient.
//!
//! Broadcasting in binary operations is deliberately narrow: shapes must be
//! equal, or one operand is a scalar, or one operand's shape is a suffix of
//! the other's (expansion along leading axes). Anything else is a shape error.

use thiserror::Error;

use crate::tensor::{GradStore, ParamId, Params};

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum KernelError {
    #[error("shape {shape:?} does not describe {numel} values")]
    BadShape { shape: Vec<usize>, numel: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("log of non-positive value {value}")]
    LogDomain { value: f64 },
    #[error("softmax over fully masked input")]
    EmptyAttention,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },
    #[error("gather row {row} out of range for table with {rows} rows")]
    GatherOutOfRange { row: usize, rows: usize },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// How a binary op's operand shapes relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// Shapes identical.
    None,
    /// Left operand is a single value expanded to the right shape.
    LhsScalar,
    /// Right operand is a single value expanded to the left shape.
    RhsScalar,
    /// Left shape is a suffix of the right; left is tiled along leading axes.
    LhsSuffix,
    /// Right shape is a suffix of the left.
    RhsSuffix,
}

enum Op {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
    },
    MatVec {
        w: Var,
        x: Var,
    },
    VecMat {
        x: Var,
        w: Var,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Dot {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    GatherRow {
        table: ParamId,
        row: usize,
    },
    Scale {
        x: Var,
        factor: f64,
    },
}

enum Payload {
    Owned(Vec<f64>),
    Param(ParamId),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    payload: Payload,
}

/// Operation record for one forward pass.
pub struct Tape<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct NodeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl NodeGrads {
    /// Gradient of the loss with respect to `var`, if any gradient flowed to it.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

/// Numerically stable sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe softplus: for x > 30 the direct form would round 1 + e^x to
/// e^x, so switch to x + ln(1 + e^-x).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &Params {
        self.params
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn numel(&self, var: Var) -> usize {
        self.nodes[var.0].shape.iter().product()
    }

    /// Current forward value of `var`.
    pub fn value(&self, var: Var) -> &[f64] {
        match &self.nodes[var.0].payload {
            Payload::Owned(data) => data,
            Payload::Param(id) => self.params.get(*id).data(),
        }
    }

    pub fn value_vec(&self, var: Var) -> Vec<f64> {
        self.value(var).to_vec()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            op,
            shape,
            payload: Payload::Owned(data),
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a parameter leaf. Repeated watches of the same parameter
    /// return the same node.
    pub fn watch(&mut self, id: ParamId) -> Var {
        if let Some(var) = self.param_vars[id.0] {
            return var;
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: self.params.get(id).shape().to_vec(),
            payload: Payload::Param(id),
        });
        let var = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(var);
        var
    }

    /// Constant leaf: participates in the forward pass, receives no gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, KernelError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(KernelError::BadShape {
                shape,
                numel: data.len(),
            });
        }
        Ok(self.push(Op::Leaf, shape, data))
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        let shape = vec![data.len()];
        self.push(Op::Leaf, shape, data)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, vec![1], vec![value])
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(KernelError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..m {
                for l in 0..k {
                    let aval = av[i * k + l];
                    if aval == 0.0 {
                        continue;
                    }
                    let brow = &bv[l * n..(l + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += aval * bv;
                    }
                }
            }
        }
        Ok(self.push(Op::Matmul { a, b }, vec![m, n], out))
    }

    /// `w · x` for a `[m,n]` matrix and a length-`n` vector, yielding `[m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, KernelError> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[1] != self.numel(x) {
            return Err(KernelError::ShapeMismatch {
                op: "matvec",
                lhs: ws,
                rhs: self.shape(x).to_vec(),
            });
        }
        let (m, n) = (ws[0], ws[1]);
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(m);
        for row in 0..m {
            let r = &wv[row * n..(row + 1) * n];
            out.push(r.iter().zip(xv).map(|(a, b)| a * b).sum());
        }
        Ok(self.push(Op::MatVec { w, x }, vec![m], out))
    }

    /// `x · w` for a length-`m` vector and a `[m,n]` matrix, yielding `[n]`.
    pub fn vecmat(&mut self, x: Var, w: Var) -> Result<Var, KernelError> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[0] != self.numel(x) {
            return Err(KernelError::ShapeMismatch {
                op: "vecmat",
                lhs: self.shape(x).to_vec(),
                rhs: ws,
            });
        }
        let (m, n) = (ws[0], ws[1]);
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out = vec![0.0; n];
        for row in 0..m {
            let scale = xv[row];
            if scale == 0.0 {
                continue;
            }
            let r = &wv[row * n..(row + 1) * n];
            for (o, v) in out.iter_mut().zip(r) {
                *o += scale * v;
            }
        }
        Ok(self.push(Op::VecMat { x, w }, vec![n], out))
    }

    fn broadcast_of(
        op: &'static str,
        sa: &[usize],
        sb: &[usize],
    ) -> Result<Broadcast, KernelError> {
        let (na, nb): (usize, usize) = (sa.iter().product(), sb.iter().product());
        if sa == sb {
            Ok(Broadcast::None)
        } else if nb == 1 {
            Ok(Broadcast::RhsScalar)
        } else if na == 1 {
            Ok(Broadcast::LhsScalar)
        } else if sa.ends_with(sb) {
            Ok(Broadcast::RhsSuffix)
        } else if sb.ends_with(sa) {
            Ok(Broadcast::LhsSuffix)
        } else {
            Err(KernelError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, KernelError> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        let bcast = Self::broadcast_of(name, self.shape(a), self.shape(b))?;
        let (big, small, flipped) = match bcast {
            Broadcast::None | Broadcast::RhsScalar | Broadcast::RhsSuffix => (a, b, false),
            Broadcast::LhsScalar | Broadcast::LhsSuffix => (b, a, true),
        };
        let shape = self.shape(big).to_vec();
        let nbig = self.numel(big);
        let nsmall = self.numel(small);
        let mut out = vec![0.0; nbig];
        {
            let bigv = self.value(big);
            let smallv = self.value(small);
            for i in 0..nbig {
                let s = smallv[i % nsmall];
                let (x, y) = if flipped { (s, bigv[i]) } else { (bigv[i], s) };
                out[i] = match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                };
            }
        }
        Ok(self.push(Op::Binary { kind, a, b, bcast }, shape, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var, KernelError> {
        let shape = self.shape(x).to_vec();
        let mut out = Vec::with_capacity(self.numel(x));
        for &v in self.value(x) {
            let y = match kind {
                UnaryKind::Sigmoid => sigmoid(v),
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Relu => v.max(0.0),
                UnaryKind::Softplus => softplus(v),
                UnaryKind::Exp => v.exp(),
                UnaryKind::Log => {
                    if v <= 0.0 {
                        return Err(KernelError::LogDomain { value: v });
                    }
                    v.ln()
                }
            };
            out.push(y);
        }
        Ok(self.push(Op::Unary { kind, x }, shape, out))
    }

    pub fn sigmoid_op(&mut self, x: Var) -> Result<Var, KernelError> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh_op(&mut self, x: Var) -> Result<Var, KernelError> {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, KernelError> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn softplus_op(&mut self, x: Var) -> Result<Var, KernelError> {
        self.unary(UnaryKind::Softplus, x)
    }

    /// Masked softmax with max-subtraction. Masked positions get weight 0;
    /// unmasked weights are positive and sum to 1.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, KernelError> {
        let n = self.numel(x);
        if let Some(m) = mask {
            if m.len() != n {
                return Err(KernelError::ShapeMismatch {
                    op: "softmax mask",
                    lhs: self.shape(x).to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let keep = |i: usize| mask.map_or(true, |m| m[i]);
        let xs = self.value(x);
        let max = (0..n)
            .filter(|&i| keep(i))
            .map(|i| xs[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(KernelError::EmptyAttention);
        }
        let mut out = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n {
            if keep(i) {
                out[i] = (xs[i] - max).exp();
                total += out[i];
            }
        }
        out.iter_mut().for_each(|v| *v /= total);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Softmax { x }, shape, out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        self.push(Op::Sum { x }, vec![1], vec![total])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.numel(x) as f64;
        let total: f64 = self.value(x).iter().sum();
        self.push(Op::Mean { x }, vec![1], vec![total / n])
    }

    /// Inner product of two same-length tensors, yielding a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        if self.numel(a) != self.numel(b) {
            return Err(KernelError::ShapeMismatch {
                op: "dot",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Op::Dot { a, b }, vec![1], vec![value]))
    }

    /// Concatenation of the flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p));
        }
        let shape = vec![data.len()];
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            shape,
            data,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, KernelError> {
        let numel: usize = shape.iter().product();
        if numel != self.numel(x) {
            return Err(KernelError::BadShape {
                shape,
                numel: self.numel(x),
            });
        }
        let data = self.value(x).to_vec();
        Ok(self.push(Op::Reshape { x }, shape, data))
    }

    /// Copies one row of a rank-2 parameter table. The backward pass
    /// scatter-adds into that row.
    pub fn gather_row(&mut self, table: ParamId, row: usize) -> Result<Var, KernelError> {
        let tensor = self.params.get(table);
        let shape = tensor.shape();
        debug_assert_eq!(shape.len(), 2);
        if row >= shape[0] {
            return Err(KernelError::GatherOutOfRange {
                row,
                rows: shape[0],
            });
        }
        let cols = shape[1];
        let data = tensor.data()[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(Op::GatherRow { table, row }, vec![cols], data))
    }

    /// Multiplication by a compile-time constant factor.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self.value(x).iter().map(|v| v * factor).collect();
        self.push(Op::Scale { x, factor }, shape, data)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Description of the first node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find_map(|(i, node)| {
            let data = match &node.payload {
                Payload::Owned(d) => d.as_slice(),
                Payload::Param(id) => self.params.get(*id).data(),
            };
            if data.iter().any(|v| !v.is_finite()) {
                Some(format!(
                    "node {i} ({}) shape {:?}",
                    op_name(&node.op),
                    node.shape
                ))
            } else {
                None
            }
        })
    }

    /// Reverse traversal from a scalar `loss`, seeded with `seed`.
    ///
    /// Gradients of watched parameters and gathered rows are accumulated into
    /// `store`; gradients of every tape node are returned for inspection.
    pub fn backward(
        &self,
        loss: Var,
        seed: f64,
        store: &mut GradStore,
    ) -> Result<NodeGrads, KernelError> {
        if self.numel(loss) != 1 {
            return Err(KernelError::LossNotScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);

        for idx in (0..self.nodes.len()).rev() {
            let Some(gout) = grads[idx].clone() else {
                continue;
            };
            // Leaf parameters flush into the external store.
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if let Payload::Param(id) = node.payload {
                        if self.params.get(id).requires_grad() {
                            store.accumulate(id, &gout, 0);
                        }
                    }
                }
                Op::GatherRow { table, row } => {
                    if self.params.get(*table).requires_grad() {
                        let cols = self.params.get(*table).shape()[1];
                        store.accumulate(*table, &gout, row * cols);
                    }
                }
                Op::Matmul { a, b } => {
                    let (m, k) = {
                        let s = self.shape(*a);
                        (s[0], s[1])
                    };
                    let n = self.shape(*b)[1];
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for l in 0..k {
                                da[i * k + l] += g * bv[l * n + j];
                            }
                        }
                    }
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for l in 0..k {
                            let aval = av[i * k + l];
                            if aval == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[l * n + j] += aval * gout[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::MatVec { w, x } => {
                    let (m, n) = {
                        let s = self.shape(*w);
                        (s[0], s[1])
                    };
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    // dW = g ⊗ x, dx = Wᵀ g
                    let mut dw = vec![0.0; m * n];
                    let mut dx = vec![0.0; n];
                    for row in 0..m {
                        let g = gout[row];
                        if g == 0.0 {
                            continue;
                        }
                        for col in 0..n {
                            dw[row * n + col] += g * xv[col];
                            dx[col] += g * wv[row * n + col];
                        }
                    }
                    accumulate(&mut grads, *w, &dw);
                    accumulate(&mut grads, *x, &dx);
                }
                Op::VecMat { x, w } => {
                    let (m, n) = {
                        let s = self.shape(*w);
                        (s[0], s[1])
                    };
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    // dx = W g, dW = x ⊗ g
                    let mut dx = vec![0.0; m];
                    let mut dw = vec![0.0; m * n];
                    for row in 0..m {
                        let r = &wv[row * n..(row + 1) * n];
                        dx[row] = r.iter().zip(&gout).map(|(a, g)| a * g).sum();
                        let scale = xv[row];
                        if scale != 0.0 {
                            for (col, g) in gout.iter().enumerate() {
                                dw[row * n + col] += scale * g;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *w, &dw);
                }
                Op::Binary { kind, a, b, bcast } => {
                    let na = self.numel(*a);
                    let nb = self.numel(*b);
                    let mut da = vec![0.0; na];
                    let mut db = vec![0.0; nb];
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    for (i, &g) in gout.iter().enumerate() {
                        let (ia, ib) = match bcast {
                            Broadcast::None => (i, i),
                            Broadcast::RhsScalar | Broadcast::RhsSuffix => (i, i % nb),
                            Broadcast::LhsScalar | Broadcast::LhsSuffix => (i % na, i),
                        };
                        match kind {
                            BinaryKind::Add => {
                                da[ia] += g;
                                db[ib] += g;
                            }
                            BinaryKind::Sub => {
                                da[ia] += g;
                                db[ib] -= g;
                            }
                            BinaryKind::Mul => {
                                da[ia] += g * bv[ib];
                                db[ib] += g * av[ia];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Unary { kind, x } => {
                    let xv = self.value(*x);
                    let yv = match &node.payload {
                        Payload::Owned(d) => d.as_slice(),
                        Payload::Param(_) => unreachable!(),
                    };
                    let dx: Vec<f64> = gout
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| {
                            let d = match kind {
                                UnaryKind::Sigmoid => yv[i] * (1.0 - yv[i]),
                                UnaryKind::Tanh => 1.0 - yv[i] * yv[i],
                                UnaryKind::Relu => {
                                    if xv[i] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryKind::Softplus => sigmoid(xv[i]),
                                UnaryKind::Exp => yv[i],
                                UnaryKind::Log => 1.0 / xv[i],
                            };
                            g * d
                        })
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Softmax { x } => {
                    let yv = match &node.payload {
                        Payload::Owned(d) => d.as_slice(),
                        Payload::Param(_) => unreachable!(),
                    };
                    let inner: f64 = gout.iter().zip(yv).map(|(g, y)| g * y).sum();
                    let dx: Vec<f64> = gout.iter().zip(yv).map(|(g, y)| y * (g - inner)).collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Sum { x } => {
                    let dx = vec![gout[0]; self.numel(*x)];
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Mean { x } => {
                    let n = self.numel(*x);
                    let dx = vec![gout[0] / n as f64; n];
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Dot { a, b } => {
                    let g = gout[0];
                    let da: Vec<f64> = self.value(*b).iter().map(|v| g * v).collect();
                    let db: Vec<f64> = self.value(*a).iter().map(|v| g * v).collect();
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.numel(p);
                        accumulate(&mut grads, p, &gout[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads, *x, &gout);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f64> = gout.iter().map(|g| g * factor).collect();
                    accumulate(&mut grads, *x, &dx);
                }
            }
        }
        Ok(NodeGrads { grads })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::MatVec { .. } => "matvec",
        Op::VecMat { .. } => "vecmat",
        Op::Binary {
            kind: BinaryKind::Add,
            ..
        } => "add",
        Op::Binary {
            kind: BinaryKind::Sub,
            ..
        } => "sub",
        Op::Binary {
            kind: BinaryKind::Mul,
            ..
        } => "mul",
        Op::Unary { kind, .. } => match kind {
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Relu => "relu",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
        },
        Op::Softmax { .. } => "softmax",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::Dot { .. } => "dot",
        Op::Concat { .. } => "concat",
        Op::Reshape { .. } => "reshape",
        Op::GatherRow { .. } => "gather_row",
        Op::Scale { .. } => "scale",
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, contribution: &[f64]) {
    match &mut grads[var.0] {
        Some(buf) => {
            for (slot, g) in buf.iter_mut().zip(contribution) {
                *slot += g;
            }
        }
        none => *none = Some(contribution.to_vec()),
    }
}

// Composite helpers used throughout the model code.

/// `w · x` for a `[m,n]` matrix and `[n]` vector, yielding `[m]`.
pub fn matvec(tape: &mut Tape, w: Var, x: Var) -> Result<Var, KernelError> {
    tape.matvec(w, x)
}

/// `x · w` for a `[m]` vector and `[m,n]` matrix, yielding `[n]`.
pub fn vecmat(tape: &mut Tape, x: Var, w: Var) -> Result<Var, KernelError> {
    tape.vecmat(x, w)
}

/// Affine map `w · x + b`.
pub fn linear(tape: &mut Tape, w: Var, x: Var, b: Var) -> Result<Var, KernelError> {
    let wx = matvec(tape, w, x)?;
    tape.add(wx, b)
}
