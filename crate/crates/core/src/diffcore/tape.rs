//! Eager computation record with reverse-mode gradients.
//!
//! Every operation is evaluated immediately and appended to the [`Tape`]. The
//! tape is append-only, so node inputs always precede the node itself; that
//! ordering is re-checked during [`Tape::backward`].

use std::collections::BTreeMap;

use super::param::{ParamId, ParamStore};
use super::tensor::{
    axis_extents, broadcast_shapes, broadcast_to, gemm, matmul,
    canonical_sum, matmul_canonical, reduce_to, Tensor,
};
use super::DiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A recorded primitive together with its input references.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Matrix product whose reductions are order-independent (see
    /// [`canonical_sum`]). Used wherever the reduction runs over node indices.
    Aggregate(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
    ScalarMul(Var, f64),
    AddScalar(Var, f64),
    SumAxis { x: Var, axis: usize, keepdim: bool },
    SumAll(Var),
    /// Log-sum-exp along an axis, keeping the axis with length one.
    LogSumExp { x: Var, axis: usize },
    BroadcastTo(Var, Vec<usize>),
    Concat(Vec<Var>),
    Transpose(Var),
    Reshape(Var, Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Aggregate(..) => "aggregate",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Relu(_) => "relu",
            Op::Sqrt(_) => "sqrt",
            Op::ClampMin(..) => "clamp_min",
            Op::ScalarMul(..) => "scalar_mul",
            Op::AddScalar(..) => "add_scalar",
            Op::SumAxis { .. } => "sum_axis",
            Op::SumAll(_) => "sum_all",
            Op::LogSumExp { .. } => "logsumexp",
            Op::BroadcastTo(..) => "broadcast",
            Op::Concat(_) => "concat",
            Op::Transpose(_) => "transpose",
            Op::Reshape(..) => "reshape",
        }
    }

    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Aggregate(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b) => vec![*a, *b],
            Op::Exp(x)
            | Op::Log(x)
            | Op::Relu(x)
            | Op::Sqrt(x)
            | Op::ClampMin(x, _)
            | Op::ScalarMul(x, _)
            | Op::AddScalar(x, _)
            | Op::SumAll(x)
            | Op::Transpose(x)
            | Op::BroadcastTo(x, _)
            | Op::Reshape(x, _) => vec![*x],
            Op::SumAxis { x, .. } | Op::LogSumExp { x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// The computation record for one forward pass.
#[derive(Default, Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    // each parameter is recorded once per tape
    params: BTreeMap<ParamId, Var>,
}

/// Gradients of a scalar output with respect to every parameter on the tape.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn binary_elementwise(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, DiffError> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let shape = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| shape_err(name, a, b))?;
    let ab = broadcast_to(a, &shape);
    let bb = broadcast_to(b, &shape);
    let data = ab.data().iter().zip(bb.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(shape, data)
}

fn sum_axis(x: &Tensor, axis: usize, keepdim: bool) -> Tensor {
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for a in 0..len {
            let base = (o * len + a) * inner;
            for i in 0..inner {
                out[o * inner + i] += x.data()[base + i];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    if keepdim {
        shape[axis] = 1;
    } else {
        shape.remove(axis);
    }
    Tensor::new(shape, out).expect("sum_axis shape")
}

/// Log-sum-exp along `axis` with max-shift and order-independent summation.
pub(crate) fn logsumexp(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_extents(x.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    let mut terms = Vec::with_capacity(len);
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| x.data()[(o * len + a) * inner + i];
            let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
            out[o * inner + i] = if m == f64::NEG_INFINITY || m.is_nan() {
                m
            } else {
                terms.clear();
                terms.extend((0..len).map(|a| (at(a) - m).exp()));
                m + canonical_sum(&terms).ln()
            };
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Tensor::new(shape, out).expect("logsumexp shape")
}

fn concat_last(parts: &[&Tensor]) -> Result<Tensor, DiffError> {
    let first = parts[0];
    let rank = first.rank();
    if rank == 0 {
        return Err(DiffError::Rank {
            op: "concat",
            expected: 1,
            got: 0,
        });
    }
    let lead = &first.shape()[..rank - 1];
    for p in parts {
        if p.rank() != rank || &p.shape()[..rank - 1] != lead {
            return Err(shape_err("concat", first, p));
        }
    }
    let rows: usize = lead.iter().product();
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[rank - 1]).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

fn require_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), DiffError> {
    if t.rank() != rank {
        return Err(DiffError::Rank {
            op,
            expected: rank,
            got: t.rank(),
        });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// A non-parameter leaf that propagates gradient requirements downstream.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Records the current value of parameter `id` as a differentiable leaf.
    /// Repeated calls on one tape return the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_leaf(store.get(id).value().clone(), true, Some(id));
        self.params.insert(id, v);
        v
    }

    /// Evaluates a primitive against the values currently on the tape.
    fn eval(&self, op: &Op) -> Result<Tensor, DiffError> {
        let v = |x: &Var| &self.nodes[x.0].value;
        let out = match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) | Op::Aggregate(a, b) => {
                let (a, b) = (v(a), v(b));
                require_rank(op.name(), a, 2)?;
                require_rank(op.name(), b, 2)?;
                if a.cols() != b.rows() {
                    return Err(shape_err(op.name(), a, b));
                }
                if matches!(op, Op::MatMul(..)) {
                    matmul(a, b)
                } else {
                    matmul_canonical(a, b)
                }
            }
            Op::Add(a, b) => binary_elementwise("add", v(a), v(b), |x, y| x + y)?,
            Op::Sub(a, b) => binary_elementwise("sub", v(a), v(b), |x, y| x - y)?,
            Op::Mul(a, b) => binary_elementwise("mul", v(a), v(b), |x, y| x * y)?,
            Op::Div(a, b) => binary_elementwise("div", v(a), v(b), |x, y| x / y)?,
            Op::Exp(x) => v(x).map(f64::exp),
            Op::Log(x) => {
                let x = v(x);
                if let Some(&bad) = x.data().iter().find(|&&e| e <= 0.0 || e.is_nan()) {
                    return Err(DiffError::LogDomain { value: bad });
                }
                x.map(f64::ln)
            }
            Op::Relu(x) => v(x).map(|e| if e > 0.0 { e } else { 0.0 }),
            Op::Sqrt(x) => {
                let x = v(x);
                if let Some(&bad) = x.data().iter().find(|&&e| e < 0.0 || e.is_nan()) {
                    return Err(DiffError::SqrtDomain { value: bad });
                }
                x.map(f64::sqrt)
            }
            Op::ClampMin(x, c) => v(x).map(|e| e.max(*c)),
            Op::ScalarMul(x, c) => v(x).map(|e| e * c),
            Op::AddScalar(x, c) => v(x).map(|e| e + c),
            Op::SumAxis { x, axis, keepdim } => {
                let x = v(x);
                if *axis >= x.rank() {
                    return Err(DiffError::Axis {
                        op: "sum_axis",
                        axis: *axis,
                        rank: x.rank(),
                    });
                }
                sum_axis(x, *axis, *keepdim)
            }
            Op::SumAll(x) => Tensor::scalar(v(x).data().iter().sum()),
            Op::LogSumExp { x, axis } => {
                let x = v(x);
                if *axis >= x.rank() {
                    return Err(DiffError::Axis {
                        op: "logsumexp",
                        axis: *axis,
                        rank: x.rank(),
                    });
                }
                logsumexp(x, *axis)
            }
            Op::BroadcastTo(x, shape) => {
                let x = v(x);
                match broadcast_shapes(x.shape(), shape) {
                    Some(s) if s == *shape => broadcast_to(x, shape),
                    _ => {
                        return Err(DiffError::Shape {
                            op: "broadcast",
                            lhs: x.shape().to_vec(),
                            rhs: shape.clone(),
                        })
                    }
                }
            }
            Op::Concat(xs) => {
                let parts: Vec<&Tensor> = xs.iter().map(v).collect();
                concat_last(&parts)?
            }
            Op::Transpose(x) => {
                let x = v(x);
                require_rank("transpose", x, 2)?;
                x.transposed()
            }
            Op::Reshape(x, shape) => {
                let x = v(x);
                x.reshaped(shape.clone()).map_err(|_| DiffError::Shape {
                    op: "reshape",
                    lhs: x.shape().to_vec(),
                    rhs: shape.clone(),
                })?
            }
        };
        Ok(out)
    }

    fn push(&mut self, op: Op) -> Result<Var, DiffError> {
        let value = self.eval(&op)?;
        let inputs = op.inputs();
        if !value.is_finite() && inputs.iter().all(|x| self.nodes[x.0].value.is_finite()) {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|x| self.nodes[x.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn aggregate(&mut self, weights: Var, x: Var) -> Result<Var, DiffError> {
        self.push(Op::Aggregate(weights, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.push(Op::Div(a, b))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, DiffError> {
        self.push(Op::Exp(x))
    }

    /// Raw natural log. Fails on non-positive entries; model code goes through
    /// [`Tape::clamped_log`] instead.
    pub fn log(&mut self, x: Var) -> Result<Var, DiffError> {
        self.push(Op::Log(x))
    }

    /// `log(max(x, floor))`.
    pub fn clamped_log(&mut self, x: Var, floor: f64) -> Result<Var, DiffError> {
        let c = self.clamp_min(x, floor)?;
        self.log(c)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.push(Op::Relu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, DiffError> {
        self.push(Op::Sqrt(x))
    }

    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var, DiffError> {
        self.push(Op::ClampMin(x, floor))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        self.push(Op::ScalarMul(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        self.push(Op::AddScalar(x, c))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var, DiffError> {
        self.push(Op::SumAxis { x, axis, keepdim })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        self.push(Op::SumAll(x))
    }

    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var, DiffError> {
        self.push(Op::LogSumExp { x, axis })
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        self.push(Op::BroadcastTo(x, shape.to_vec()))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, DiffError> {
        if xs.is_empty() {
            return Err(DiffError::Rank {
                op: "concat",
                expected: 1,
                got: 0,
            });
        }
        self.push(Op::Concat(xs.to_vec()))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, DiffError> {
        self.push(Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        self.push(Op::Reshape(x, shape.to_vec()))
    }

    /// Re-evaluates every non-leaf node from the recorded leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>, DiffError> {
        let mut scratch = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
            params: BTreeMap::new(),
        };
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => scratch.eval(op)?,
            };
            scratch.nodes.push(Node {
                op: node.op.clone(),
                value,
                requires_grad: node.requires_grad,
                param: node.param,
            });
        }
        Ok(scratch.nodes.into_iter().map(|n| n.value).collect())
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients, DiffError> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(DiffError::NotScalar {
                shape: out.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape().to_vec(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let inputs = node.op.inputs();
            if let Some(bad) = inputs.iter().find(|x| x.0 >= idx) {
                return Err(DiffError::Cycle {
                    node: idx,
                    input: bad.0,
                });
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            for (input, gin) in self.local_grads(node, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gin.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(gin),
                }
            }
        }

        let mut map = BTreeMap::new();
        for (idx, g) in grads.into_iter().enumerate() {
            let (Some(g), Some(id)) = (g, self.nodes[idx].param) else {
                continue;
            };
            match map.entry(id) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(g);
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    let acc: &mut Tensor = e.get_mut();
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
        }
        Ok(Gradients { map })
    }

    /// Vector-Jacobian products of `node` for upstream gradient `g`.
    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let v = |x: &Var| &self.nodes[x.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Aggregate(a, b) => {
                let (av, bv) = (v(a), v(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut out = Vec::with_capacity(2);
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga);
                    out.push((*a, Tensor::new(vec![m, k], ga).unwrap()));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut gb);
                    out.push((*b, Tensor::new(vec![k, n], gb).unwrap()));
                }
                out
            }
            Op::Add(a, b) => vec![
                (*a, reduce_to(g, v(a).shape())),
                (*b, reduce_to(g, v(b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(g, v(a).shape())),
                (*b, reduce_to(&g.map(|e| -e), v(b).shape())),
            ],
            Op::Mul(a, b) => {
                let (av, bv) = (broadcast_to(v(a), g.shape()), broadcast_to(v(b), g.shape()));
                let ga = zip_with(g, &bv, |g, b| g * b);
                let gb = zip_with(g, &av, |g, a| g * a);
                vec![
                    (*a, reduce_to(&ga, v(a).shape())),
                    (*b, reduce_to(&gb, v(b).shape())),
                ]
            }
            Op::Div(a, b) => {
                let (av, bv) = (broadcast_to(v(a), g.shape()), broadcast_to(v(b), g.shape()));
                let ga = zip_with(g, &bv, |g, b| g / b);
                let gb_data = g
                    .data()
                    .iter()
                    .zip(av.data().iter().zip(bv.data()))
                    .map(|(g, (a, b))| -g * a / (b * b))
                    .collect();
                let gb = Tensor::new(g.shape().to_vec(), gb_data).unwrap();
                vec![
                    (*a, reduce_to(&ga, v(a).shape())),
                    (*b, reduce_to(&gb, v(b).shape())),
                ]
            }
            Op::Exp(x) => vec![(*x, zip_with(g, y, |g, y| g * y))],
            Op::Log(x) => vec![(*x, zip_with(g, v(x), |g, x| g / x))],
            Op::Relu(x) => vec![(*x, zip_with(g, v(x), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::Sqrt(x) => vec![(*x, zip_with(g, y, |g, y| g / (2.0 * y)))],
            Op::ClampMin(x, c) => {
                let c = *c;
                vec![(*x, zip_with(g, v(x), |g, x| if x > c { g } else { 0.0 }))]
            }
            Op::ScalarMul(x, c) => vec![(*x, g.map(|e| e * c))],
            Op::AddScalar(x, _) => vec![(*x, g.clone())],
            Op::SumAxis { x, axis, .. } => {
                let xs = v(x).shape();
                let mut kept = xs.to_vec();
                kept[*axis] = 1;
                let g = g.reshaped(kept).unwrap();
                vec![(*x, broadcast_to(&g, xs))]
            }
            Op::SumAll(x) => vec![(*x, Tensor::full(v(x).shape().to_vec(), g.item()))],
            Op::LogSumExp { x, .. } => {
                let xv = v(x);
                let yb = broadcast_to(y, xv.shape());
                let gb = broadcast_to(g, xv.shape());
                let data = xv
                    .data()
                    .iter()
                    .zip(yb.data().iter().zip(gb.data()))
                    .map(|(x, (y, g))| {
                        if *y == f64::NEG_INFINITY {
                            0.0
                        } else {
                            g * (x - y).exp()
                        }
                    })
                    .collect();
                vec![(*x, Tensor::new(xv.shape().to_vec(), data).unwrap())]
            }
            Op::BroadcastTo(x, _) => vec![(*x, reduce_to(g, v(x).shape()))],
            Op::Concat(xs) => {
                let rank = g.rank();
                let total = g.shape()[rank - 1];
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                let mut out = Vec::with_capacity(xs.len());
                for x in xs {
                    let xv = v(x);
                    let w = xv.shape()[rank - 1];
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    out.push((*x, Tensor::new(xv.shape().to_vec(), data).unwrap()));
                    offset += w;
                }
                out
            }
            Op::Transpose(x) => vec![(*x, g.transposed())],
            Op::Reshape(x, _) => vec![(*x, g.reshaped(v(x).shape().to_vec()).unwrap())],
        }
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}
