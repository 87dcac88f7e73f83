use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use super::{Tensor, TensorError};
use crate::geometry::NeighborIndex;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Operation identifiers, used for reporting and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    AddBias,
    Softmax,
    Sum,
    Mean,
    Max,
    Gather,
    Reshape,
    CrossEntropy,
}

impl OpKind {
    /// Every differentiable op, in report order.
    pub const DIFFERENTIABLE: [OpKind; 14] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::AddBias,
        OpKind::Softmax,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Max,
        OpKind::Gather,
        OpKind::Reshape,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::AddBias => "add_bias",
            OpKind::Softmax => "softmax",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Max => "max",
            OpKind::Gather => "gather_rows",
            OpKind::Reshape => "reshape",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::DIFFERENTIABLE
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown op `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: Binary,
        lhs: Var,
        rhs: Var,
        /// rhs has a trailing extent of 1 that spreads across lhs's last axis
        broadcast: bool,
    },
    Scale(Var, T),
    Relu(Var),
    AddBias(Var, Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Reduce {
        input: Var,
        axis: usize,
        kind: ReduceKind,
        /// winning position along the axis, per output element (max only)
        argmax: Vec<usize>,
    },
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Binary { kind, .. } => match kind {
                Binary::Add => OpKind::Add,
                Binary::Sub => OpKind::Sub,
                Binary::Mul => OpKind::Mul,
            },
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(..) => OpKind::Relu,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Reduce { kind, .. } => match kind {
                ReduceKind::Sum => OpKind::Sum,
                ReduceKind::Mean => OpKind::Mean,
                ReduceKind::Max => OpKind::Max,
            },
            Op::Gather { .. } => OpKind::Gather,
            Op::Reshape(..) => OpKind::Reshape,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Every op appends one node; [`Tape::backward`] walks the nodes in
/// reverse and accumulates gradients into each input. Values on the tape
/// are never mutated after they are recorded.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: &[usize], contrib: Vec<T>) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(contrib) {
                *a += b;
            }
        }
        None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data: contrib,
            })
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    /// A tape whose backward pass for `kind` has its sign flipped.
    /// Exists so the gradient checker can be shown to catch a broken rule.
    pub fn with_fault(kind: OpKind) -> Self {
        Self {
            fault: Some(kind),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    /// Records a leaf. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == T::zero() {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: Binary, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let (sl, sr) = (self.shape(lhs), self.shape(rhs));
        let broadcast = if sl == sr {
            false
        } else if !sl.is_empty()
            && sl.len() == sr.len()
            && sl[..sl.len() - 1] == sr[..sr.len() - 1]
            && sr[sr.len() - 1] == 1
        {
            true
        } else {
            return Err(TensorError::ShapeMismatch {
                op: match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                lhs: sl.to_vec(),
                rhs: sr.to_vec(),
            });
        };
        let shape = sl.to_vec();
        let last = *shape.last().unwrap_or(&1);
        let (ld, rd) = (self.value(lhs).data(), self.value(rhs).data());
        let f = |a: T, b: T| match kind {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
        };
        let data: Vec<T> = if broadcast {
            ld.iter().enumerate().map(|(i, &a)| f(a, rd[i / last])).collect()
        } else {
            ld.iter().zip(rd).map(|(&a, &b)| f(a, b)).collect()
        };
        let rg = self.rg(lhs) || self.rg(rhs);
        Ok(self.push(
            Tensor { shape, data },
            Op::Binary {
                kind,
                lhs,
                rhs,
                broadcast,
            },
            rg,
        ))
    }

    /// Elementwise sum. `rhs` may instead have extent 1 on the last axis,
    /// in which case it broadcasts along that axis.
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, lhs, rhs)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, lhs, rhs)
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, lhs, rhs)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a * factor).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor { shape, data }, Op::Scale(x, factor), rg)
    }

    /// `max(x, 0)`; NaN passes through.
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&a| if a > T::zero() || a.is_nan() { a } else { T::zero() })
            .collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor { shape, data }, Op::Relu(x), rg)
    }

    /// `x[..., C] + bias[C]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.is_empty() || sb.len() != 1 || sb[0] != sx[sx.len() - 1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let c = sb[0];
        let bd = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a + bd[i % c])
            .collect();
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor { shape, data }, Op::AddBias(x, bias), rg))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for q in 0..inner {
                let at = |l: usize| o * len * inner + l * inner + q;
                let mut m = T::neg_infinity();
                for l in 0..len {
                    m = m.max(xd[at(l)]);
                }
                let mut s = T::zero();
                for l in 0..len {
                    let e = (xd[at(l)] - m).exp();
                    out[at(l)] = e;
                    s += e;
                }
                for l in 0..len {
                    out[at(l)] /= s;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor { shape, data: out }, Op::Softmax { input: x, axis }, rg))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var, TensorError> {
        let rank = self.shape(x).len();
        if rank == 0 {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis: 0,
                rank,
            });
        }
        self.softmax(x, rank - 1)
    }

    /// Reduces `axis` away. Max ties resolve to the lowest index.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "reduce",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = Vec::new();
        if kind == ReduceKind::Max {
            argmax = vec![0usize; outer * inner];
        }
        for o in 0..outer {
            for q in 0..inner {
                let at = |l: usize| o * len * inner + l * inner + q;
                let r = o * inner + q;
                match kind {
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let mut s = T::zero();
                        for l in 0..len {
                            s += xd[at(l)];
                        }
                        if kind == ReduceKind::Mean {
                            s /= T::lit(len as f64);
                        }
                        out[r] = s;
                    }
                    ReduceKind::Max => {
                        // first NaN wins, so NaN propagates
                        let mut best = 0;
                        for l in 1..len {
                            if xd[at(best)].is_nan() {
                                break;
                            }
                            if xd[at(l)] > xd[at(best)] || xd[at(l)].is_nan() {
                                best = l;
                            }
                        }
                        out[r] = xd[at(best)];
                        argmax[r] = best;
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor {
                shape: out_shape,
                data: out,
            },
            Op::Reduce {
                input: x,
                axis,
                kind,
                argmax,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(x, axis, ReduceKind::Sum)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(x, axis, ReduceKind::Mean)
    }

    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(x, axis, ReduceKind::Max)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, vec![n])?;
        self.sum(flat, 0)
    }

    /// `out[i][j] = features[idx[i][j]]`, shape `M×k×C`.
    pub fn gather_rows(&mut self, features: Var, idx: &NeighborIndex) -> Result<Var, TensorError> {
        let shape = self.shape(features);
        if shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                lhs: shape.to_vec(),
                rhs: vec![idx.rows(), idx.k()],
            });
        }
        let (n, c) = (shape[0], shape[1]);
        if let Some(&bad) = idx.as_slice().iter().find(|&&i| i >= n) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                bound: n,
            });
        }
        let fd = self.value(features).data();
        let mut out = Vec::with_capacity(idx.as_slice().len() * c);
        for &i in idx.as_slice() {
            out.extend_from_slice(&fd[i * c..(i + 1) * c]);
        }
        let rg = self.rg(features);
        Ok(self.push(
            Tensor {
                shape: vec![idx.rows(), idx.k(), c],
                data: out,
            },
            Op::Gather {
                input: features,
                indices: idx.as_slice().to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (b, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                bound: k,
            });
        }
        let zd = self.value(logits).data();
        let mut probs = vec![T::zero(); b * k];
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &zd[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for (j, &z) in row.iter().enumerate() {
                let e = (z - m).exp();
                probs[r * k + j] = e;
                s += e;
            }
            for p in &mut probs[r * k..(r + 1) * k] {
                *p /= s;
            }
            total += s.ln() - (row[label] - m);
        }
        let loss = total / T::lit(b as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Hash of every data-dependent branch taken in the forward pass
    /// (relu activation masks and max-reduction winners). Two evaluations
    /// with equal signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.nodes[x.0].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::Reduce { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate into
    /// every node that requires them; grad-tracking leaves the loss does
    /// not depend on receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: lv.shape().to_vec(),
            data: vec![T::one()],
        });

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let sign = if self.fault == Some(node.op.kind()) {
                -T::one()
            } else {
                T::one()
            };
            let gd = g.data();
            let send = |grads: &mut Vec<Option<Tensor<T>>>, to: Var, mut contrib: Vec<T>| {
                if !self.nodes[to.0].requires_grad {
                    return;
                }
                if sign != T::one() {
                    contrib.iter_mut().for_each(|c| *c = *c * sign);
                }
                accumulate(&mut grads[to.0], self.nodes[to.0].value.shape(), contrib);
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    let (ad, bd) = (av.data(), bv.data());
                    if self.nodes[a.0].requires_grad {
                        let mut da = vec![T::zero(); m * k];
                        for i in 0..m {
                            let gr = &gd[i * n..(i + 1) * n];
                            for p in 0..k {
                                let br = &bd[p * n..(p + 1) * n];
                                da[i * k + p] = gr.iter().zip(br).map(|(&x, &y)| x * y).sum();
                            }
                        }
                        send(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = vec![T::zero(); k * n];
                        for i in 0..m {
                            let gr = &gd[i * n..(i + 1) * n];
                            for p in 0..k {
                                let av = ad[i * k + p];
                                if av == T::zero() {
                                    continue;
                                }
                                for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                    *d += av * gv;
                                }
                            }
                        }
                        send(&mut grads, *b, db);
                    }
                }
                Op::Binary {
                    kind,
                    lhs,
                    rhs,
                    broadcast,
                } => {
                    let (ld, rd) = (self.nodes[lhs.0].value.data(), self.nodes[rhs.0].value.data());
                    let last = *g.shape().last().unwrap_or(&1);
                    let r_at = |i: usize| if *broadcast { i / last } else { i };
                    let dl: Vec<T> = match kind {
                        Binary::Add | Binary::Sub => gd.to_vec(),
                        Binary::Mul => gd.iter().enumerate().map(|(i, &gv)| gv * rd[r_at(i)]).collect(),
                    };
                    let mut dr = vec![T::zero(); rd.len()];
                    for (i, &gv) in gd.iter().enumerate() {
                        dr[r_at(i)] += match kind {
                            Binary::Add => gv,
                            Binary::Sub => -gv,
                            Binary::Mul => gv * ld[i],
                        };
                    }
                    send(&mut grads, *lhs, dl);
                    send(&mut grads, *rhs, dr);
                }
                Op::Scale(x, factor) => {
                    send(&mut grads, *x, gd.iter().map(|&gv| gv * *factor).collect());
                }
                Op::Relu(x) => {
                    let xd = self.nodes[x.0].value.data();
                    let dx = gd
                        .iter()
                        .zip(xd)
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                        .collect();
                    send(&mut grads, *x, dx);
                }
                Op::AddBias(x, bias) => {
                    let c = self.nodes[bias.0].value.numel();
                    let mut db = vec![T::zero(); c];
                    for (i, &gv) in gd.iter().enumerate() {
                        db[i % c] += gv;
                    }
                    send(&mut grads, *x, gd.to_vec());
                    send(&mut grads, *bias, db);
                }
                Op::Softmax { input, axis } => {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for q in 0..inner {
                            let at = |l: usize| o * len * inner + l * inner + q;
                            let mut dot = T::zero();
                            for l in 0..len {
                                dot += gd[at(l)] * y[at(l)];
                            }
                            for l in 0..len {
                                dx[at(l)] = y[at(l)] * (gd[at(l)] - dot);
                            }
                        }
                    }
                    send(&mut grads, *input, dx);
                }
                Op::Reduce {
                    input,
                    axis,
                    kind,
                    argmax,
                } => {
                    let in_shape = self.nodes[input.0].value.shape();
                    let (outer, len, inner) = axis_split(in_shape, *axis);
                    let mut dx = vec![T::zero(); outer * len * inner];
                    let inv = T::one() / T::lit(len as f64);
                    for o in 0..outer {
                        for q in 0..inner {
                            let r = o * inner + q;
                            let at = |l: usize| o * len * inner + l * inner + q;
                            match kind {
                                ReduceKind::Sum => (0..len).for_each(|l| dx[at(l)] = gd[r]),
                                ReduceKind::Mean => (0..len).for_each(|l| dx[at(l)] = gd[r] * inv),
                                ReduceKind::Max => dx[at(argmax[r])] = gd[r],
                            }
                        }
                    }
                    send(&mut grads, *input, dx);
                }
                Op::Gather { input, indices } => {
                    let iv = &self.nodes[input.0].value;
                    let c = iv.shape()[1];
                    let mut dx = vec![T::zero(); iv.numel()];
                    for (slot, &row) in indices.iter().enumerate() {
                        for (d, &gv) in dx[row * c..(row + 1) * c].iter_mut().zip(&gd[slot * c..(slot + 1) * c]) {
                            *d += gv;
                        }
                    }
                    send(&mut grads, *input, dx);
                }
                Op::Reshape(x) => send(&mut grads, *x, gd.to_vec()),
                Op::CrossEntropy { logits, labels, probs } => {
                    let b = labels.len();
                    let k = probs.len() / b;
                    let scale = gd[0] / T::lit(b as f64);
                    let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (r, &label) in labels.iter().enumerate() {
                        dz[r * k + label] -= scale;
                    }
                    send(&mut grads, *logits, dz);
                }
            }
            grads[id] = Some(g);
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        self.grads = grads;
        Ok(())
    }
}
