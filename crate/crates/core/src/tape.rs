//! Differentiation tape over a fixed op set.
//!
//! Operations are recorded eagerly: calling an op computes its value and
//! appends a node, so the node list is always topologically ordered and a
//! forward "pass" is just tape construction. Two derivative modes are
//! provided:
//!
//! * [`Tape::grad`] — reverse mode. Walks the tape backwards accumulating
//!   numeric adjoints of a scalar loss with respect to chosen nodes.
//! * [`Tape::jvp`] — forward mode. Builds *new tape nodes* computing the
//!   directional derivative of outputs with respect to a designated input.
//!   Because tangents are ordinary nodes, a later reverse pass
//!   differentiates through them; that is how residual terms like
//!   `d(field)/dt` stay trainable.
//!
//! [`Tape::stop_gradient`] passes values through unchanged and contributes
//! zero to both modes.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{cp_dense, Tensor};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op<T> {
    /// Designated input (forward-mode seeds attach here).
    Input,
    /// Trainable parameter (reverse-mode targets).
    Param,
    /// Constant; no derivative in either mode.
    Constant,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// value = input * c
    Scale(NodeId, T),
    /// value = input + c
    Offset(NodeId, T),
    Recip(NodeId),
    Sqrt(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Tanh(NodeId),
    Softplus(NodeId),
    Abs(NodeId),
    /// signum; derivative defined as zero everywhere
    Sign(NodeId),
    MatMul(NodeId, NodeId),
    SliceCols { input: NodeId, start: usize, len: usize },
    Reshape(NodeId),
    BroadcastTo(NodeId),
    SumAll(NodeId),
    /// CP contraction of factor matrices `[n_a, R]` into `n_1 x .. x n_d`.
    CpContract(Vec<NodeId>),
    StopGradient(NodeId),
}

struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    // ---- leaves -----------------------------------------------------

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Param, value)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn constant_scalar(&mut self, v: T) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    // ---- elementwise ------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a].value.zip_broadcast(&self.nodes[b].value, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a].value.zip_broadcast(&self.nodes[b].value, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.nodes[a].value.map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn offset(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.nodes[a].value.map(|x| x + c);
        self.push(Op::Offset(a, c), v)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -T::one())
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.recip());
        self.push(Op::Recip(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.sqrt());
        self.push(Op::Sqrt(a), v)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.sin());
        self.push(Op::Sin(a), v)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.cos());
        self.push(Op::Cos(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.exp());
        self.push(Op::Exp(a), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.tanh());
        self.push(Op::Tanh(a), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(softplus_stable);
        self.push(Op::Softplus(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.abs());
        self.push(Op::Abs(a), v)
    }

    pub fn sign(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(signum_zero);
        self.push(Op::Sign(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.mul(a, a)
    }

    // ---- structure --------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.nodes[input].value.slice_cols(start, len)?;
        Ok(self.push(Op::SliceCols { input, start, len }, v))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.nodes[a].value.reshape(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.nodes[a].value.broadcast_to(shape)?;
        Ok(self.push(Op::BroadcastTo(a), v))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.nodes[a].value.sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len();
        let s = self.sum_all(a);
        self.scale(s, T::one() / T::from_count(n))
    }

    /// CP contraction: factors `[n_a, R]` combine into the dense tensor
    /// `out[i_1..i_d] = sum_r prod_a F_a[i_a, r]`.
    pub fn cp_contract(&mut self, factors: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor<T>> = factors.iter().map(|&f| &self.nodes[f].value).collect();
        let v = cp_dense(&vals)?;
        Ok(self.push(Op::CpContract(factors.to_vec()), v))
    }

    /// Value passes through; contributes zero to gradients and tangents.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.clone();
        self.push(Op::StopGradient(a), v)
    }

    /// Ids of the nodes feeding `id`.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id].op {
            Op::Input | Op::Param | Op::Constant => vec![],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Recip(a)
            | Op::Sqrt(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Exp(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Abs(a)
            | Op::Sign(a)
            | Op::Reshape(a)
            | Op::BroadcastTo(a)
            | Op::SumAll(a)
            | Op::StopGradient(a) => vec![*a],
            Op::SliceCols { input, .. } => vec![*input],
            Op::CpContract(fs) => fs.clone(),
        }
    }

    // ---- reverse mode -----------------------------------------------

    /// Gradient of a scalar `loss` node with respect to each node in
    /// `targets`. Targets the loss does not reach get zero gradients.
    pub fn grad(&self, loss: NodeId, targets: &[NodeId]) -> Result<Vec<Tensor<T>>> {
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss].value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; loss + 1];
        adj[loss] = Some(Tensor::full(self.nodes[loss].value.shape(), T::one()));
        let target_set: std::collections::HashSet<NodeId> = targets.iter().copied().collect();
        let mut out: std::collections::HashMap<NodeId, Tensor<T>> = Default::default();

        for i in (0..=loss).rev() {
            let Some(a) = adj[i].take() else { continue };
            if target_set.contains(&i) {
                match out.entry(i) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        let acc = e.get().zip(&a, |x, y| x + y)?;
                        e.insert(acc);
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(a.clone());
                    }
                }
            }
            self.backward_node(i, &a, &mut adj)?;
        }

        targets
            .iter()
            .map(|t| {
                Ok(out
                    .remove(t)
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[*t].value.shape())))
            })
            .collect()
    }

    fn backward_node(&self, i: NodeId, a: &Tensor<T>, adj: &mut Vec<Option<Tensor<T>>>) -> Result<()> {
        let acc = |adj: &mut Vec<Option<Tensor<T>>>, id: NodeId, delta: Tensor<T>| -> Result<()> {
            match &mut adj[id] {
                Some(existing) => {
                    *existing = existing.zip(&delta, |x, y| x + y)?;
                }
                slot @ None => *slot = Some(delta),
            }
            Ok(())
        };
        match &self.nodes[i].op {
            Op::Input | Op::Param | Op::Constant => {}
            Op::Add(x, y) => {
                acc(adj, *x, a.reduce_sum_to(self.nodes[*x].value.shape())?)?;
                acc(adj, *y, a.reduce_sum_to(self.nodes[*y].value.shape())?)?;
            }
            Op::Mul(x, y) => {
                let dx = a.zip_broadcast(&self.nodes[*y].value, |g, v| g * v)?;
                acc(adj, *x, dx.reduce_sum_to(self.nodes[*x].value.shape())?)?;
                let dy = a.zip_broadcast(&self.nodes[*x].value, |g, v| g * v)?;
                acc(adj, *y, dy.reduce_sum_to(self.nodes[*y].value.shape())?)?;
            }
            Op::Scale(x, c) => {
                let c = *c;
                acc(adj, *x, a.map(|g| g * c))?;
            }
            Op::Offset(x, _) => acc(adj, *x, a.clone())?,
            Op::Recip(x) => {
                let d = a.zip(&self.nodes[i].value, |g, y| -g * y * y)?;
                acc(adj, *x, d)?;
            }
            Op::Sqrt(x) => {
                let half = T::lit(0.5);
                let d = a.zip(&self.nodes[i].value, |g, y| g * half / y)?;
                acc(adj, *x, d)?;
            }
            Op::Sin(x) => {
                let d = a.zip(&self.nodes[*x].value, |g, v| g * v.cos())?;
                acc(adj, *x, d)?;
            }
            Op::Cos(x) => {
                let d = a.zip(&self.nodes[*x].value, |g, v| -g * v.sin())?;
                acc(adj, *x, d)?;
            }
            Op::Exp(x) => {
                let d = a.zip(&self.nodes[i].value, |g, y| g * y)?;
                acc(adj, *x, d)?;
            }
            Op::Tanh(x) => {
                let d = a.zip(&self.nodes[i].value, |g, y| g * (T::one() - y * y))?;
                acc(adj, *x, d)?;
            }
            Op::Softplus(x) => {
                let d = a.zip(&self.nodes[*x].value, |g, v| g * sigmoid_stable(v))?;
                acc(adj, *x, d)?;
            }
            Op::Abs(x) => {
                let d = a.zip(&self.nodes[*x].value, |g, v| g * signum_zero(v))?;
                acc(adj, *x, d)?;
            }
            Op::Sign(_) => {}
            Op::MatMul(x, y) => {
                let dx = a.matmul_nt(&self.nodes[*y].value)?;
                acc(adj, *x, dx)?;
                let dy = self.nodes[*x].value.matmul_tn(a)?;
                acc(adj, *y, dy)?;
            }
            Op::SliceCols { input, start, len } => {
                let shape = self.nodes[*input].value.shape();
                let (m, k) = (shape[0], shape[1]);
                let mut d = Tensor::zeros(shape);
                for r in 0..m {
                    d.data_mut()[r * k + start..r * k + start + len]
                        .copy_from_slice(&a.data()[r * len..(r + 1) * len]);
                }
                acc(adj, *input, d)?;
            }
            Op::Reshape(x) => {
                acc(adj, *x, a.reshape(self.nodes[*x].value.shape())?)?;
            }
            Op::BroadcastTo(x) => {
                acc(adj, *x, a.reduce_sum_to(self.nodes[*x].value.shape())?)?;
            }
            Op::SumAll(x) => {
                acc(adj, *x, Tensor::full(self.nodes[*x].value.shape(), a.item()))?;
            }
            Op::CpContract(factors) => {
                let vals: Vec<&Tensor<T>> = factors.iter().map(|&f| &self.nodes[f].value).collect();
                let grads = cp_contract_backward(&vals, a)?;
                for (f, g) in factors.iter().zip(grads) {
                    acc(adj, *f, g)?;
                }
            }
            Op::StopGradient(_) => {}
        }
        Ok(())
    }

    // ---- forward mode -----------------------------------------------

    /// Directional derivative of each output with respect to `input`,
    /// along `direction`. Returns newly built tangent nodes (zero
    /// constants for outputs the input does not reach).
    pub fn jvp(&mut self, outputs: &[NodeId], input: NodeId, direction: Tensor<T>) -> Result<Vec<NodeId>> {
        if direction.shape() != self.nodes[input].value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "jvp direction {:?} vs input {:?}",
                direction.shape(),
                self.nodes[input].value.shape()
            )));
        }
        let horizon = outputs.iter().copied().max().unwrap_or(input);
        let mut tan: Vec<Option<NodeId>> = vec![None; horizon + 1];
        tan[input] = Some(self.constant(direction));
        for i in input + 1..=horizon {
            if let Some(t) = self.tangent_node(i, &tan)? {
                tan[i] = Some(t);
            }
        }
        outputs
            .iter()
            .map(|&o| match tan[o] {
                Some(t) => Ok(t),
                None => Ok(self.constant(Tensor::zeros(self.nodes[o].value.shape()))),
            })
            .collect()
    }

    /// Per-point derivative along one grid axis: jvp with an all-ones
    /// direction on an axis-coordinate input.
    pub fn axis_tangent(&mut self, outputs: &[NodeId], input: NodeId) -> Result<Vec<NodeId>> {
        let ones = Tensor::full(self.nodes[input].value.shape(), T::one());
        self.jvp(outputs, input, ones)
    }

    fn tangent_node(&mut self, i: NodeId, tan: &[Option<NodeId>]) -> Result<Option<NodeId>> {
        let t = |id: NodeId| tan.get(id).copied().flatten();
        let op = self.nodes[i].op.clone();
        let out = match op {
            Op::Input | Op::Param | Op::Constant => None,
            Op::StopGradient(_) | Op::Sign(_) => None,
            Op::Add(x, y) => match (t(x), t(y)) {
                (Some(tx), Some(ty)) => Some(self.add(tx, ty)?),
                (Some(tx), None) => Some(tx),
                (None, Some(ty)) => Some(ty),
                (None, None) => None,
            },
            Op::Mul(x, y) => {
                let mut parts = Vec::new();
                if let Some(tx) = t(x) {
                    parts.push(self.mul(tx, y)?);
                }
                if let Some(ty) = t(y) {
                    parts.push(self.mul(x, ty)?);
                }
                match parts.as_slice() {
                    [] => None,
                    [one] => Some(*one),
                    [p, q] => Some(self.add(*p, *q)?),
                    _ => unreachable!(),
                }
            }
            Op::Scale(x, c) => t(x).map(|tx| self.scale(tx, c)),
            Op::Offset(x, _) => t(x),
            Op::Recip(x) => match t(x) {
                None => None,
                Some(tx) => {
                    let y2 = self.mul(i, i)?;
                    let m = self.mul(tx, y2)?;
                    Some(self.neg(m))
                }
            },
            Op::Sqrt(x) => match t(x) {
                None => None,
                Some(tx) => {
                    let r = self.recip(i);
                    let m = self.mul(tx, r)?;
                    Some(self.scale(m, T::lit(0.5)))
                }
            },
            Op::Sin(x) => match t(x) {
                None => None,
                Some(tx) => {
                    let c = self.cos(x);
                    Some(self.mul(tx, c)?)
                }
            },
            Op::Cos(x) => match t(x) {
                None => None,
                Some(tx) => {
                    let s = self.sin(x);
                    let m = self.mul(tx, s)?;
                    Some(self.neg(m))
                }
            },
            Op::Exp(x) => match t(x) {
                None => None,
                Some(tx) => Some(self.mul(tx, i)?),
            },
            Op::Tanh(x) => match t(x) {
                None => None,
                Some(tx) => {
                    let y2 = self.mul(i, i)?;
                    let neg = self.scale(y2, -T::one());
                    let one_minus = self.offset(neg, T::one());
                    Some(self.mul(tx, one_minus)?)
                }
            },
            Op::Softplus(x) => match t(x) {
                None => None,
                Some(tx) => {
                    // sigmoid via tanh keeps the expression finite for all inputs
                    let half_x = self.scale(x, T::lit(0.5));
                    let th = self.tanh(half_x);
                    let half_th = self.scale(th, T::lit(0.5));
                    let sig = self.offset(half_th, T::lit(0.5));
                    Some(self.mul(tx, sig)?)
                }
            },
            Op::Abs(x) => match t(x) {
                None => None,
                Some(tx) => {
                    let s = self.sign(x);
                    Some(self.mul(tx, s)?)
                }
            },
            Op::MatMul(x, y) => {
                let mut parts = Vec::new();
                if let Some(tx) = t(x) {
                    parts.push(self.matmul(tx, y)?);
                }
                if let Some(ty) = t(y) {
                    parts.push(self.matmul(x, ty)?);
                }
                match parts.as_slice() {
                    [] => None,
                    [one] => Some(*one),
                    [p, q] => Some(self.add(*p, *q)?),
                    _ => unreachable!(),
                }
            }
            Op::SliceCols { input, start, len } => match t(input) {
                None => None,
                Some(tx) => Some(self.slice_cols(tx, start, len)?),
            },
            Op::Reshape(x) => match t(x) {
                None => None,
                Some(tx) => {
                    let shape = self.nodes[i].value.shape().to_vec();
                    Some(self.reshape(tx, &shape)?)
                }
            },
            Op::BroadcastTo(x) => match t(x) {
                None => None,
                Some(tx) => {
                    let shape = self.nodes[i].value.shape().to_vec();
                    Some(self.broadcast_to(tx, &shape)?)
                }
            },
            Op::SumAll(x) => t(x).map(|tx| self.sum_all(tx)),
            Op::CpContract(factors) => {
                let mut parts = Vec::new();
                for (k, &f) in factors.iter().enumerate() {
                    if let Some(tf) = t(f) {
                        let mut with_tangent = factors.clone();
                        with_tangent[k] = tf;
                        parts.push(self.cp_contract(&with_tangent)?);
                    }
                }
                let mut it = parts.into_iter();
                match it.next() {
                    None => None,
                    Some(first) => {
                        let mut acc = first;
                        for p in it {
                            acc = self.add(acc, p)?;
                        }
                        Some(acc)
                    }
                }
            }
        };
        // Tangent nodes must carry the primal's shape so downstream
        // reductions see fully broadcast values.
        if let Some(tn) = out {
            let want = self.nodes[i].value.shape().to_vec();
            if self.nodes[tn].value.shape() != want.as_slice() {
                return Ok(Some(self.broadcast_to(tn, &want)?));
            }
        }
        Ok(out)
    }
}

fn softplus_stable<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid_stable<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    half * (x * half).tanh() + half
}

fn signum_zero<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Adjoints of a CP contraction with respect to every factor.
///
/// The forward split into left/right Khatri-Rao chains is rebuilt here, so
/// each factor gradient reduces to two matrix products plus the chain
/// unwinding.
fn cp_contract_backward<T: Real>(factors: &[&Tensor<T>], adjoint: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let d = factors.len();
    let r = factors[0].shape()[1];
    if d == 1 {
        let n = factors[0].shape()[0];
        let mut g = Tensor::zeros(&[n, r]);
        for i in 0..n {
            let a = adjoint.data()[i];
            for v in &mut g.data_mut()[i * r..(i + 1) * r] {
                *v = a;
            }
        }
        return Ok(vec![g]);
    }
    let split = (d / 2).max(1);
    let (lf, rf) = factors.split_at(split);
    let (left_chain, left) = kr_chain(lf)?;
    let (right_chain, right) = kr_chain(rf)?;
    let nl = left.shape()[0];
    let nr = right.shape()[0];
    let flat = adjoint.reshape(&[nl, nr])?;
    let d_left = flat.matmul(&right)?;
    let d_right = flat.matmul_tn(&left)?;
    let mut grads_left = kr_chain_backward(lf, &left_chain, d_left)?;
    let grads_right = kr_chain_backward(rf, &right_chain, d_right)?;
    grads_left.extend(grads_right);
    Ok(grads_left)
}

/// Progressive Khatri-Rao product, returning all intermediates
/// (`chain[k]` = product of factors `0..=k`) and the final matrix.
fn kr_chain<T: Real>(factors: &[&Tensor<T>]) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
    let mut chain = Vec::with_capacity(factors.len());
    chain.push(factors[0].clone());
    for f in &factors[1..] {
        let next = chain.last().unwrap().khatri_rao(f)?;
        chain.push(next);
    }
    let last = chain.last().unwrap().clone();
    Ok((chain, last))
}

fn kr_chain_backward<T: Real>(
    factors: &[&Tensor<T>],
    chain: &[Tensor<T>],
    d_last: Tensor<T>,
) -> Result<Vec<Tensor<T>>> {
    let r = factors[0].shape()[1];
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; factors.len()];
    let mut d_acc = d_last;
    for k in (1..factors.len()).rev() {
        // d_acc is the adjoint of chain[k] = kr(chain[k-1], factors[k])
        let a = &chain[k - 1];
        let b = factors[k];
        let (na, nb) = (a.shape()[0], b.shape()[0]);
        let mut da = Tensor::zeros(&[na, r]);
        let mut db = Tensor::zeros(&[nb, r]);
        for i in 0..na {
            let arow = &a.data()[i * r..(i + 1) * r];
            for j in 0..nb {
                let grow = &d_acc.data()[(i * nb + j) * r..(i * nb + j + 1) * r];
                let brow = &b.data()[j * r..(j + 1) * r];
                let darow = &mut da.data_mut()[i * r..(i + 1) * r];
                for rr in 0..r {
                    darow[rr] += grow[rr] * brow[rr];
                }
                let dbrow = &mut db.data_mut()[j * r..(j + 1) * r];
                for rr in 0..r {
                    dbrow[rr] += grow[rr] * arow[rr];
                }
            }
        }
        grads[k] = Some(db);
        d_acc = da;
    }
    grads[0] = Some(d_acc);
    Ok(grads.into_iter().map(|g| g.unwrap()).collect())
}
