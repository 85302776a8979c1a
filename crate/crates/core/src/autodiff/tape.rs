//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles in
//! creation order, which is already a topological order. [`Tape::backward`]
//! replays the record in reverse.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{broadcast_shape, for_each_broadcast, gemm, permute_offsets, Tensor};
use crate::error::{Error, Result};

/// Local gradient rule for [`Tape::custom`]: `(inputs, output, grad_output) -> grad per input`.
pub type CustomBackward = Box<dyn Fn(&[&[f64]], &[f64], &[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    SumAll(usize),
    SumAxis(usize),
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
        batch: usize,
        shared_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Permute(usize, Arc<Vec<usize>>),
    Reshape(usize),
    Softmax(usize),
    LogSumExp(usize, Option<Arc<Vec<bool>>>),
    LayerNorm(usize, Vec<f64>),
    Concat(Vec<usize>, usize),
    IndexSelect(usize, Vec<usize>),
    Custom(Vec<usize>, CustomBackward),
}

struct Node {
    shape: Vec<usize>,
    value: Arc<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass. Not `Sync`: one tape per thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    grads: RefCell<Option<Vec<Option<Vec<f64>>>>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    fn value_of(&self, id: usize) -> Arc<Vec<f64>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Non-differentiable input.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t.shape, t.data, Op::Leaf, false)
    }

    /// Differentiable leaf input.
    pub fn var(&self, t: Tensor) -> Var<'_> {
        self.push(t.shape, t.data, Op::Leaf, true)
    }

    /// Leaf for a stored parameter. Repeated calls on one tape return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let (shape, data) = store.shared(id);
        let var = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                shape: shape.to_vec(),
                value: data,
                op: Op::Param,
                requires_grad: store.is_trainable(id),
            });
            Var {
                tape: self,
                id: nodes.len() - 1,
            }
        };
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Registers a primitive with a caller-supplied gradient rule.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        shape: Vec<usize>,
        value: Vec<f64>,
        backward: CustomBackward,
    ) -> Result<Var<'t>> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::Dim("custom op: value length does not match shape".into()));
        }
        let rg = inputs.iter().any(|v| self.rg(v.id));
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(shape, value, Op::Custom(ids, backward), rg))
    }

    /// Populates gradients of every differentiable ancestor of `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].shape.iter().product::<usize>() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        if self.grads.borrow().is_some() {
            return Err(Error::Backward(
                "gradients already computed; call reset_grads first".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        *self.grads.borrow_mut() = Some(grads);
        Ok(())
    }

    pub fn reset_grads(&self) {
        *self.grads.borrow_mut() = None;
    }

    /// Gradient of a node after [`Tape::backward`]; `None` if unreachable or constant.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.as_ref()?.get(v.id)?.as_ref()?;
        Some(Tensor {
            shape: self.shape_of(v.id),
            data: g.clone(),
        })
    }

    /// Parameter gradients gathered by parameter id.
    pub fn param_grads(&self, store: &ParamStore) -> Grads {
        let mut out = Grads::zeros_like(store);
        let grads = self.grads.borrow();
        if let Some(grads) = grads.as_ref() {
            for (&pid, &node) in self.params.borrow().iter() {
                if let Some(g) = &grads[node] {
                    out.add_to(pid, g);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot => *slot = Some(contrib),
    }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &[f64], out_shape: &[usize], shape: &[usize]) -> Vec<f64> {
    if out_shape == shape {
        return g.to_vec();
    }
    let mut r = vec![0.0; shape.iter().product()];
    for_each_broadcast(out_shape, shape, shape, |o, ia, _| r[ia] += g[o]);
    r
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let out = &node.value;
    match &node.op {
        Op::Leaf | Op::Param => {}
        &Op::Add(a, b) => {
            acc(grads, nodes, a, reduce_to(g, &node.shape, &nodes[a].shape));
            acc(grads, nodes, b, reduce_to(g, &node.shape, &nodes[b].shape));
        }
        &Op::Sub(a, b) => {
            acc(grads, nodes, a, reduce_to(g, &node.shape, &nodes[a].shape));
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            acc(grads, nodes, b, reduce_to(&neg, &node.shape, &nodes[b].shape));
        }
        &Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let (sa, sb) = (&nodes[a].shape, &nodes[b].shape);
            let mut ga = vec![0.0; va.len()];
            let mut gb = vec![0.0; vb.len()];
            for_each_broadcast(&node.shape, sa, sb, |o, ia, ib| {
                ga[ia] += g[o] * vb[ib];
                gb[ib] += g[o] * va[ia];
            });
            acc(grads, nodes, a, ga);
            acc(grads, nodes, b, gb);
        }
        &Op::Scale(a, c) => acc(grads, nodes, a, g.iter().map(|x| x * c).collect()),
        &Op::AddScalar(a) => acc(grads, nodes, a, g.to_vec()),
        &Op::Relu(a) => {
            let x = &nodes[a].value;
            let d = g
                .iter()
                .zip(x.iter())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            acc(grads, nodes, a, d);
        }
        &Op::Sigmoid(a) => {
            let d = g.iter().zip(out.iter()).map(|(g, y)| g * y * (1.0 - y)).collect();
            acc(grads, nodes, a, d);
        }
        &Op::Exp(a) => {
            let d = g.iter().zip(out.iter()).map(|(g, y)| g * y).collect();
            acc(grads, nodes, a, d);
        }
        &Op::Log(a) => {
            let x = &nodes[a].value;
            let d = g.iter().zip(x.iter()).map(|(g, x)| g / x).collect();
            acc(grads, nodes, a, d);
        }
        &Op::Sqrt(a) => {
            let d = g.iter().zip(out.iter()).map(|(g, y)| g * 0.5 / y).collect();
            acc(grads, nodes, a, d);
        }
        &Op::SumAll(a) => acc(grads, nodes, a, vec![g[0]; nodes[a].value.len()]),
        &Op::SumAxis(a) => {
            let shape = &nodes[a].shape;
            let mut d = vec![0.0; nodes[a].value.len()];
            for_each_broadcast(shape, &node.shape, &node.shape, |o, ig, _| d[o] = g[ig]);
            acc(grads, nodes, a, d);
        }
        &Op::MatMul {
            a,
            b,
            trans_b,
            batch,
            shared_b,
            m,
            k,
            n,
        } => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            if nodes[a].requires_grad {
                let mut ga = vec![0.0; va.len()];
                for t in 0..batch {
                    let bo = if shared_b { 0 } else { t * k * n };
                    let bb = &vb[bo..bo + k * n];
                    let gs = &g[t * m * n..(t + 1) * m * n];
                    let gslice = &mut ga[t * m * k..(t + 1) * m * k];
                    // dA = G · op(B)^T
                    if trans_b {
                        gemm(gs, bb, gslice, m, n, k, false, false);
                    } else {
                        gemm(gs, bb, gslice, m, n, k, false, true);
                    }
                }
                acc(grads, nodes, a, ga);
            }
            if nodes[b].requires_grad {
                let mut gb = vec![0.0; vb.len()];
                for t in 0..batch {
                    let bo = if shared_b { 0 } else { t * k * n };
                    let aa = &va[t * m * k..(t + 1) * m * k];
                    let gs = &g[t * m * n..(t + 1) * m * n];
                    let gslice = &mut gb[bo..bo + k * n];
                    if trans_b {
                        // B is n×k: dB = G^T · A
                        gemm(gs, aa, gslice, n, m, k, true, false);
                    } else {
                        // dB = A^T · G
                        gemm(aa, gs, gslice, k, m, n, true, false);
                    }
                }
                acc(grads, nodes, b, gb);
            }
        }
        Op::Permute(a, perm) => {
            let offs = permute_offsets(&nodes[*a].shape, perm);
            let mut d = vec![0.0; g.len()];
            for (o, &src) in offs.iter().enumerate() {
                d[src] = g[o];
            }
            acc(grads, nodes, *a, d);
        }
        &Op::Reshape(a) => acc(grads, nodes, a, g.to_vec()),
        &Op::Softmax(a) => {
            let c = *node.shape.last().unwrap();
            let mut d = vec![0.0; g.len()];
            for r in 0..g.len() / c {
                let ys = &out[r * c..(r + 1) * c];
                let gs = &g[r * c..(r + 1) * c];
                let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                for j in 0..c {
                    d[r * c + j] = ys[j] * (gs[j] - dot);
                }
            }
            acc(grads, nodes, a, d);
        }
        Op::LogSumExp(a, mask) => {
            let x = &nodes[*a].value;
            let c = *nodes[*a].shape.last().unwrap();
            let mut d = vec![0.0; x.len()];
            for r in 0..x.len() / c {
                let lse = out[r];
                for j in 0..c {
                    let i = r * c + j;
                    if mask.as_ref().map_or(true, |m| m[i]) {
                        d[i] = g[r] * (x[i] - lse).exp();
                    }
                }
            }
            acc(grads, nodes, *a, d);
        }
        Op::LayerNorm(a, inv_std) => {
            let c = *node.shape.last().unwrap();
            let mut d = vec![0.0; g.len()];
            for (r, &s) in inv_std.iter().enumerate() {
                let ys = &out[r * c..(r + 1) * c];
                let gs = &g[r * c..(r + 1) * c];
                let mg = gs.iter().sum::<f64>() / c as f64;
                let mgy = gs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                for j in 0..c {
                    d[r * c + j] = s * (gs[j] - mg - ys[j] * mgy);
                }
            }
            acc(grads, nodes, *a, d);
        }
        Op::Concat(parts, axis) => {
            let outer: usize = node.shape[..*axis].iter().product();
            let inner: usize = node.shape[axis + 1..].iter().product();
            let total = node.shape[*axis] * inner;
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].shape[*axis] * inner;
                if nodes[p].requires_grad {
                    let mut d = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        d.extend_from_slice(&g[o * total + offset..o * total + offset + w]);
                    }
                    acc(grads, nodes, p, d);
                }
                offset += w;
            }
        }
        Op::IndexSelect(a, idx) => {
            let row: usize = nodes[*a].shape[1..].iter().product();
            let mut d = vec![0.0; nodes[*a].value.len()];
            for (r, &src) in idx.iter().enumerate() {
                for j in 0..row {
                    d[src * row + j] += g[r * row + j];
                }
            }
            acc(grads, nodes, *a, d);
        }
        Op::Custom(inputs, rule) => {
            let ins: Vec<&[f64]> = inputs.iter().map(|&i| nodes[i].value.as_slice()).collect();
            let ds = rule(&ins, out, g);
            for (&i, d) in inputs.iter().zip(ds) {
                acc(grads, nodes, i, d);
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        Tensor {
            shape: self.shape(),
            data: self.tape.value_of(self.id).as_ref().clone(),
        }
    }

    /// Single entry of a scalar-sized tensor.
    pub fn item(&self) -> f64 {
        self.tape.value_of(self.id)[0]
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.tape.value_of(self.id);
        let data = v.iter().map(|&x| f(x)).collect();
        self.tape.push(self.shape(), data, op, self.requires_grad())
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        let out_shape = broadcast_shape(&sa, &sb).ok_or(Error::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (va, vb) = (self.tape.value_of(self.id), self.tape.value_of(other.id));
        let data = if sa == sb {
            va.iter().zip(vb.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut d = vec![0.0; out_shape.iter().product()];
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| d[o] = f(va[ia], vb[ib]));
            d
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out_shape, data, op(self.id, other.id), rg))
    }

    /// Elementwise sum with same-rank broadcasting.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(*self)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&self) -> Var<'t> {
        let s = self.tape.value_of(self.id).iter().sum();
        self.tape
            .push(vec![1], vec![s], Op::SumAll(self.id), self.requires_grad())
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Dim(format!("sum_axis: axis {axis} out of range for {shape:?}")));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let v = self.tape.value_of(self.id);
        let mut d = vec![0.0; out_shape.iter().product()];
        for_each_broadcast(&shape, &out_shape, &out_shape, |o, ig, _| d[ig] += v[o]);
        Ok(self
            .tape
            .push(out_shape, d, Op::SumAxis(self.id), self.requires_grad()))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::Dim(format!("mean_axis: axis {axis} out of range")))?;
        if n == 0 {
            return Err(Error::Dim("mean over empty axis".into()));
        }
        Ok(self.sum_axis(axis)?.scale(1.0 / n as f64))
    }

    /// Matrix product over the last two axes. `other` is either rank 2 (shared
    /// across the batch) or has the same leading axes as `self`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false)
    }

    /// `self · otherᵀ` over the last two axes.
    pub fn matmul_t(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: Var<'t>, trans_b: bool) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        let err = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(err());
        }
        let lead = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if !shared_b && &sb[..sb.len() - 2] != lead {
            return Err(err());
        }
        let batch: usize = lead.iter().product();
        let (va, vb) = (self.tape.value_of(self.id), self.tape.value_of(other.id));
        let mut out = vec![0.0; batch * m * n];
        for t in 0..batch {
            let bo = if shared_b { 0 } else { t * k * n };
            gemm(
                &va[t * m * k..(t + 1) * m * k],
                &vb[bo..bo + k * n],
                &mut out[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
                false,
                trans_b,
            );
        }
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            out_shape,
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
                trans_b,
                batch,
                shared_b,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Dim(format!("permute: {perm:?} is not a permutation of rank {}", shape.len())));
        }
        let v = self.tape.value_of(self.id);
        let data = permute_offsets(&shape, perm).into_iter().map(|o| v[o]).collect();
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        Ok(self.tape.push(
            out_shape,
            data,
            Op::Permute(self.id, Arc::new(perm.to_vec())),
            self.requires_grad(),
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::Dim("transpose needs rank ≥ 2".into()));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let old = self.shape();
        if old.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: old,
                rhs: shape.to_vec(),
            });
        }
        let v = self.tape.value_of(self.id).as_ref().clone();
        Ok(self
            .tape
            .push(shape.to_vec(), v, Op::Reshape(self.id), self.requires_grad()))
    }

    /// Softmax over the last axis. Entries with `mask == false` get probability
    /// exactly 0; a row with no unmasked entry is an error.
    pub fn softmax(&self, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let shape = self.shape();
        let c = *shape.last().ok_or_else(|| Error::Dim("softmax of rank-0".into()))?;
        let v = self.tape.value_of(self.id);
        if let Some(m) = mask {
            if m.len() != v.len() {
                return Err(Error::Dim(format!(
                    "softmax: mask has {} entries for shape {shape:?}",
                    m.len()
                )));
            }
        }
        let mut out = vec![0.0; v.len()];
        for r in 0..v.len() / c.max(1) {
            let keep = |j: usize| mask.map_or(true, |m| m[r * c + j]) && v[r * c + j] != f64::NEG_INFINITY;
            let mx = (0..c)
                .filter(|&j| keep(j))
                .map(|j| v[r * c + j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::Dim(format!("softmax: row {r} is fully masked")));
            }
            let mut z = 0.0;
            for j in (0..c).filter(|&j| keep(j)) {
                let e = (v[r * c + j] - mx).exp();
                out[r * c + j] = e;
                z += e;
            }
            for o in &mut out[r * c..(r + 1) * c] {
                *o /= z;
            }
        }
        Ok(self
            .tape
            .push(shape, out, Op::Softmax(self.id), self.requires_grad()))
    }

    /// `log Σ exp` over the last axis (restricted to `mask`), keeping the axis with size 1.
    pub fn logsumexp(&self, mask: Option<&[bool]>) -> Result<Var<'t>> {
        let shape = self.shape();
        let c = *shape.last().ok_or_else(|| Error::Dim("logsumexp of rank-0".into()))?;
        let v = self.tape.value_of(self.id);
        if let Some(m) = mask {
            if m.len() != v.len() {
                return Err(Error::Dim("logsumexp: mask length mismatch".into()));
            }
        }
        let rows = v.len() / c.max(1);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let keep = |j: usize| mask.map_or(true, |m| m[r * c + j]);
            let mx = (0..c)
                .filter(|&j| keep(j))
                .map(|j| v[r * c + j])
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                return Err(Error::Dim(format!("logsumexp: row {r} is fully masked")));
            }
            let s: f64 = (0..c).filter(|&j| keep(j)).map(|j| (v[r * c + j] - mx).exp()).sum();
            out.push(mx + s.ln());
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = 1;
        Ok(self.tape.push(
            out_shape,
            out,
            Op::LogSumExp(self.id, mask.map(|m| Arc::new(m.to_vec()))),
            self.requires_grad(),
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self, eps: f64) -> Result<Var<'t>> {
        let shape = self.shape();
        let c = *shape.last().ok_or_else(|| Error::Dim("layer_norm of rank-0".into()))?;
        let v = self.tape.value_of(self.id);
        let rows = v.len() / c.max(1);
        let mut out = vec![0.0; v.len()];
        let mut inv = Vec::with_capacity(rows);
        for r in 0..rows {
            let xs = &v[r * c..(r + 1) * c];
            let mean = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[r * c + j] = (xs[j] - mean) * s;
            }
            inv.push(s);
        }
        Ok(self
            .tape
            .push(shape, out, Op::LayerNorm(self.id, inv), self.requires_grad()))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dim("concat of zero tensors".into()))?;
        let tape = first.tape;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::Dim(format!("concat: axis {axis} out of range")));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for p in parts {
            let s = p.shape();
            let same = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s,
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        let values: Vec<(Arc<Vec<f64>>, usize)> = parts
            .iter()
            .map(|p| (tape.value_of(p.id), p.shape()[axis] * inner))
            .collect();
        for o in 0..outer {
            for (v, w) in &values {
                data.extend_from_slice(&v[o * w..(o + 1) * w]);
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(out_shape, data, Op::Concat(ids, axis), rg))
    }

    /// Gathers slices along axis 0; indices may repeat.
    pub fn index_select(&self, indices: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let rows = *shape.first().ok_or_else(|| Error::Dim("index_select of rank-0".into()))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Dim(format!("index_select: index {bad} out of range {rows}")));
        }
        let row: usize = shape[1..].iter().product();
        let v = self.tape.value_of(self.id);
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&v[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        Ok(self.tape.push(
            out_shape,
            data,
            Op::IndexSelect(self.id, indices.to_vec()),
            self.requires_grad(),
        ))
    }
}

/// Parameter gradients indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Grads {
    pub by_param: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            by_param: vec![None; store.len()],
        }
    }

    pub fn add_to(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.by_param[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g.to_vec()),
        }
    }

    /// Adds `other` into `self`; summation order is the caller's call order.
    pub fn accumulate(&mut self, other: &Grads) {
        for (i, g) in other.by_param.iter().enumerate() {
            if let Some(g) = g {
                self.add_to(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.by_param.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param[id.0].as_deref()
    }
}
