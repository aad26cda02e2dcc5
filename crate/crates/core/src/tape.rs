//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] is an append-only list of nodes. Leaves are either `input`
//! (constants) or `param` (differentiated); every other node records the
//! primitive that produced it together with its operand ids, so the list is
//! topologically ordered by construction and each node is produced exactly
//! once. Forward values are computed eagerly at record time and kept on the
//! tape.
//!
//! Three executions share one set of generic kernels:
//!
//! * `backward` replays the op list in reverse over the stored `f64` values
//!   and accumulates adjoints (the gradient).
//! * `replay` re-runs the op list forward on fresh leaf values.
//! * `hvp` replays forward with [`Dual`] entries whose tangents encode a
//!   direction `v`, then runs the same reverse sweep in dual arithmetic; the
//!   tangent of the resulting gradient is the Hessian-vector product `H v`
//!   (forward-over-reverse). No Hessian is ever materialized, so memory stays
//!   linear in the parameter count.

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{Dual, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded primitive. Variants hold operand ids; the output id is the
/// position of the node on the tape.
#[derive(Clone, Debug)]
enum Op {
    /// Leaf fed by the caller; never differentiated.
    Input,
    /// Leaf fed by the caller; receives a gradient.
    Param,
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Hadamard { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    /// Adds a 1 x c bias row to every row of `a`.
    AddRow { a: NodeId, bias: NodeId },
    /// Elementwise affine combination of same-shape nodes plus a constant.
    Linear { terms: Vec<(f64, NodeId)>, bias: f64 },
    Relu { a: NodeId },
    Exp { a: NodeId },
    /// `ln(max(x, 1e-300))`; the floor keeps the value finite and zeroes the
    /// gradient where it binds.
    Log { a: NodeId },
    Clamp { a: NodeId, lo: f64, hi: f64 },
    RowSoftmax { a: NodeId },
    RowSum { a: NodeId },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
}

impl Op {
    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param => vec![],
            Op::MatMul { a, b }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Hadamard { a, b }
            | Op::Div { a, b } => vec![*a, *b],
            Op::AddRow { a, bias } => vec![*a, *bias],
            Op::Linear { terms, .. } => terms.iter().map(|&(_, id)| id).collect(),
            Op::Relu { a }
            | Op::Exp { a }
            | Op::Log { a }
            | Op::Clamp { a, .. }
            | Op::RowSoftmax { a }
            | Op::RowSum { a }
            | Op::SumAll { a }
            | Op::MeanAll { a } => vec![*a],
        }
    }
}

/// Gradient of a scalar node with respect to the tape's `param` leaves, in
/// declaration order, together with the scalar's value.
#[derive(Clone, Debug)]
pub struct GradResult {
    pub loss: f64,
    pub grads: Vec<Matrix>,
}

/// Whether the derivative through an inner update treats the update as a
/// constant shift (`First`) or differentiates through it exactly (`Second`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradOrder {
    First,
    Second,
}

pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Matrix>,
    /// Param leaves in declaration order.
    params: Vec<NodeId>,
    /// All leaves (inputs and params) in declaration order.
    leaves: Vec<NodeId>,
    /// Nodes reachable from a param leaf; adjoints are only propagated here.
    needs_grad: Vec<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { ops: Vec::new(), values: Vec::new(), params: Vec::new(), leaves: Vec::new(), needs_grad: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.values[id.0]
    }

    /// Value of a 1 x 1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.shape() != (1, 1) {
            return Err(shape_err("scalar", format!("node is {}x{}, expected 1x1", v.rows(), v.cols())));
        }
        Ok(v.get(0, 0))
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push_leaf(Op::Input, value, false)
    }

    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push_leaf(Op::Param, value, true)
    }

    fn push_leaf(&mut self, op: Op, value: Matrix, is_param: bool) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.needs_grad.push(is_param);
        self.leaves.push(id);
        if is_param {
            self.params.push(id);
        }
        id
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.values[id.0].shape()
    }

    fn record(&mut self, op: Op, name: &'static str) -> Result<NodeId> {
        let value = eval_op::<f64>(&op, &self.values);
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        let grad = op.operands().iter().any(|id| self.needs_grad[id.0]);
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.values.push(value);
        self.needs_grad.push(grad);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(shape_err("matmul", format!("{}x{} * {}x{}", ar, ac, br, bc)));
        }
        self.record(Op::MatMul { a, b }, "matmul")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        self.record(Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        self.record(Op::Sub { a, b }, "sub")
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("hadamard", a, b)?;
        self.record(Op::Hadamard { a, b }, "hadamard")
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("div", a, b)?;
        self.record(Op::Div { a, b }, "div")
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, ac) = self.shape(a);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != ac {
            return Err(shape_err("add_row", format!("bias is {}x{}, expected 1x{}", br, bc, ac)));
        }
        self.record(Op::AddRow { a, bias }, "add_row")
    }

    /// `sum_i k_i * x_i + bias`, elementwise over same-shape nodes.
    pub fn linear(&mut self, terms: &[(f64, NodeId)], bias: f64) -> Result<NodeId> {
        if terms.is_empty() {
            return Err(shape_err("linear", "no terms".to_string()));
        }
        let shape = self.shape(terms[0].1);
        for &(_, id) in terms {
            if self.shape(id) != shape {
                return Err(shape_err("linear", "terms differ in shape".to_string()));
            }
        }
        self.record(Op::Linear { terms: terms.to_vec(), bias }, "linear")
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.linear(&[(k, a)], 0.0)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Relu { a }, "relu")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Exp { a }, "exp")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Log { a }, "log")
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo <= hi) {
            return Err(Error::InvalidConfig(format!("clamp bounds [{}, {}] inverted", lo, hi)));
        }
        self.record(Op::Clamp { a, lo, hi }, "clamp")
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::RowSoftmax { a }, "softmax")
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::RowSum { a }, "row_sum")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::SumAll { a }, "sum")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::MeanAll { a }, "mean")
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(shape_err(op, format!("{}x{} vs {}x{}", ar, ac, br, bc)));
        }
        Ok(())
    }

    /// Gradient of the scalar node `out` with respect to every param leaf.
    /// Params that do not influence `out` get zero matrices.
    pub fn backward(&self, out: NodeId) -> Result<GradResult> {
        let loss = self.scalar(out)?;
        let adjoints = self.backprop::<f64>(&self.values, out)?;
        let grads = self
            .params
            .iter()
            .map(|&p| match &adjoints[p.0] {
                Some(g) => g.clone(),
                None => Matrix::zeros(self.values[p.0].rows(), self.values[p.0].cols()),
            })
            .collect();
        Ok(GradResult { loss, grads })
    }

    /// Re-runs the recorded ops on fresh leaf values (declaration order).
    /// With the original leaf values this reproduces the stored values
    /// bit for bit.
    pub fn replay(&self, leaf_values: &[Matrix]) -> Result<Vec<Matrix>> {
        if leaf_values.len() != self.leaves.len() {
            return Err(shape_err("replay", format!("expected {} leaf values, got {}", self.leaves.len(), leaf_values.len())));
        }
        self.forward::<f64>(leaf_values)
    }

    /// Hessian-vector product of the scalar `out` with respect to the leaves
    /// `wrt`, in direction `dir` (forward-over-reverse). Entries of `dir`
    /// align with `wrt`; tangents of all other leaves are zero.
    pub fn hvp(&self, out: NodeId, wrt: &[NodeId], dir: &[Matrix]) -> Result<Vec<Matrix>> {
        if wrt.len() != dir.len() {
            return Err(shape_err("hvp", format!("{} wrt nodes but {} directions", wrt.len(), dir.len())));
        }
        self.scalar(out)?;
        let mut dual_leaves: Vec<Matrix<Dual>> = Vec::with_capacity(self.leaves.len());
        for &leaf in &self.leaves {
            let tangent = wrt.iter().position(|&w| w == leaf).map(|i| &dir[i]);
            if let Some(t) = tangent {
                if t.shape() != self.values[leaf.0].shape() {
                    return Err(shape_err("hvp", "direction shape mismatch".to_string()));
                }
            }
            dual_leaves.push(self.values[leaf.0].to_dual(tangent));
        }
        let dual_values = self.forward::<Dual>(&dual_leaves)?;
        let adjoints = self.backprop::<Dual>(&dual_values, out)?;
        Ok(wrt
            .iter()
            .map(|&p| match &adjoints[p.0] {
                Some(g) => g.tangent(),
                None => Matrix::zeros(self.values[p.0].rows(), self.values[p.0].cols()),
            })
            .collect())
    }

    fn forward<S: Scalar>(&self, leaf_values: &[Matrix<S>]) -> Result<Vec<Matrix<S>>> {
        let mut values: Vec<Matrix<S>> = Vec::with_capacity(self.ops.len());
        let mut next_leaf = 0;
        for (i, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Input | Op::Param => {
                    let m = leaf_values[next_leaf].clone();
                    if m.shape() != self.values[i].shape() {
                        return Err(shape_err("replay", format!("leaf {} shape changed", next_leaf)));
                    }
                    next_leaf += 1;
                    m
                }
                _ => eval_op::<S>(op, &values),
            };
            values.push(v);
        }
        Ok(values)
    }

    fn backprop<S: Scalar>(&self, values: &[Matrix<S>], out: NodeId) -> Result<Vec<Option<Matrix<S>>>> {
        if self.shape(out) != (1, 1) {
            return Err(shape_err("backward", "output node is not scalar".to_string()));
        }
        let mut adj: Vec<Option<Matrix<S>>> = vec![None; self.ops.len()];
        let mut seed = Matrix::<S>::zeros(1, 1);
        seed.set(0, 0, S::one());
        adj[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            backprop_op::<S>(&self.ops[i], &g, values, i, &mut adj, &self.needs_grad);
            adj[i] = Some(g);
        }
        Ok(adj)
    }
}

/// Forward kernel for one recorded op. Operand ids always precede the op on
/// the tape, so `values` only needs the prefix computed so far.
fn eval_op<S: Scalar>(op: &Op, values: &[Matrix<S>]) -> Matrix<S> {
    match op {
        Op::Input | Op::Param => unreachable!("leaves are not evaluated"),
        Op::MatMul { a, b } => values[a.0].matmul(&values[b.0]),
        Op::Add { a, b } => values[a.0].add(&values[b.0]),
        Op::Sub { a, b } => values[a.0].sub(&values[b.0]),
        Op::Hadamard { a, b } => values[a.0].hadamard(&values[b.0]),
        Op::Div { a, b } => values[a.0].zip_map(&values[b.0], |x, y| x / y),
        Op::AddRow { a, bias } => {
            let va = &values[a.0];
            let vb = &values[bias.0];
            Matrix::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) + vb.get(0, c))
        }
        Op::Linear { terms, bias } => {
            let (rows, cols) = values[terms[0].1 .0].shape();
            let b = S::from_f64(*bias);
            Matrix::from_fn(rows, cols, |r, c| {
                terms
                    .iter()
                    .fold(b, |acc, &(k, id)| acc + S::from_f64(k) * values[id.0].get(r, c))
            })
        }
        Op::Relu { a } => values[a.0].map(|v| if v.gt(0.0) { v } else { S::zero() }),
        Op::Exp { a } => values[a.0].map(|v| v.exp()),
        Op::Log { a } => values[a.0].map(|v| v.ln_floored()),
        Op::Clamp { a, lo, hi } => {
            let lo_s = S::from_f64(*lo);
            let hi_s = S::from_f64(*hi);
            values[a.0].map(|v| {
                if v.primal() < *lo {
                    lo_s
                } else if v.primal() > *hi {
                    hi_s
                } else {
                    v
                }
            })
        }
        Op::RowSoftmax { a } => values[a.0].row_softmax(),
        Op::RowSum { a } => {
            let va = &values[a.0];
            Matrix::from_fn(va.rows(), 1, |r, _| {
                va.row(r).iter().fold(S::zero(), |acc, &v| acc + v)
            })
        }
        Op::SumAll { a } => {
            let mut m = Matrix::zeros(1, 1);
            m.set(0, 0, values[a.0].sum());
            m
        }
        Op::MeanAll { a } => {
            let va = &values[a.0];
            let mut m = Matrix::zeros(1, 1);
            m.set(0, 0, va.sum() * S::from_f64(1.0 / va.len() as f64));
            m
        }
    }
}

fn backprop_op<S: Scalar>(
    op: &Op,
    g: &Matrix<S>,
    values: &[Matrix<S>],
    out_idx: usize,
    adj: &mut [Option<Matrix<S>>],
    needs_grad: &[bool],
) {
    let mut accumulate = |id: NodeId, delta: Matrix<S>| {
        if !needs_grad[id.0] {
            return;
        }
        match &mut adj[id.0] {
            Some(acc) => acc.axpy(1.0, &delta),
            slot @ None => *slot = Some(delta),
        }
    };

    match op {
        Op::Input | Op::Param => {}
        Op::MatMul { a, b } => {
            let va = &values[a.0];
            let vb = &values[b.0];
            accumulate(*a, g.matmul(&vb.transpose()));
            accumulate(*b, va.transpose().matmul(g));
        }
        Op::Add { a, b } => {
            accumulate(*a, g.clone());
            accumulate(*b, g.clone());
        }
        Op::Sub { a, b } => {
            accumulate(*a, g.clone());
            accumulate(*b, g.scale(-1.0));
        }
        Op::Hadamard { a, b } => {
            accumulate(*a, g.hadamard(&values[b.0]));
            accumulate(*b, g.hadamard(&values[a.0]));
        }
        Op::Div { a, b } => {
            let vb = &values[b.0];
            let vy = &values[out_idx];
            accumulate(*a, g.zip_map(vb, |gi, bi| gi / bi));
            // d/db (a/b) = -y/b
            let mut db = g.hadamard(vy);
            db = db.zip_map(vb, |n, bi| S::zero() - n / bi);
            accumulate(*b, db);
        }
        Op::AddRow { a, bias } => {
            accumulate(*a, g.clone());
            let mut col = Matrix::<S>::zeros(1, g.cols());
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    col.set(0, c, col.get(0, c) + g.get(r, c));
                }
            }
            accumulate(*bias, col);
        }
        Op::Linear { terms, .. } => {
            for &(k, id) in terms {
                accumulate(id, g.scale(k));
            }
        }
        Op::Relu { a } => {
            let va = &values[a.0];
            accumulate(*a, g.zip_map(va, |gi, ai| if ai.gt(0.0) { gi } else { S::zero() }));
        }
        Op::Exp { a } => {
            accumulate(*a, g.hadamard(&values[out_idx]));
        }
        Op::Log { a } => {
            let va = &values[a.0];
            accumulate(
                *a,
                g.zip_map(va, |gi, ai| if ai.gt(crate::scalar::LOG_FLOOR) { gi / ai } else { S::zero() }),
            );
        }
        Op::Clamp { a, lo, hi } => {
            let va = &values[a.0];
            accumulate(
                *a,
                g.zip_map(va, |gi, ai| {
                    let v = ai.primal();
                    if v >= *lo && v <= *hi {
                        gi
                    } else {
                        S::zero()
                    }
                }),
            );
        }
        Op::RowSoftmax { a } => {
            // dL/dx_j = p_j * (g_j - sum_k g_k p_k), per row.
            let p = &values[out_idx];
            let mut da = Matrix::<S>::zeros(p.rows(), p.cols());
            for r in 0..p.rows() {
                let mut dot = S::zero();
                for c in 0..p.cols() {
                    dot = dot + g.get(r, c) * p.get(r, c);
                }
                for c in 0..p.cols() {
                    da.set(r, c, p.get(r, c) * (g.get(r, c) - dot));
                }
            }
            accumulate(*a, da);
        }
        Op::RowSum { a } => {
            let (rows, cols) = values[a.0].shape();
            let mut da = Matrix::<S>::zeros(rows, cols);
            for r in 0..rows {
                let gr = g.get(r, 0);
                for c in 0..cols {
                    da.set(r, c, gr);
                }
            }
            accumulate(*a, da);
        }
        Op::SumAll { a } => {
            let (rows, cols) = values[a.0].shape();
            let gv = g.get(0, 0);
            accumulate(*a, Matrix::from_fn(rows, cols, |_, _| gv));
        }
        Op::MeanAll { a } => {
            let (rows, cols) = values[a.0].shape();
            let gv = g.get(0, 0) * S::from_f64(1.0 / (rows * cols) as f64);
            accumulate(*a, Matrix::from_fn(rows, cols, |_, _| gv));
        }
    }
}

/// One explicit gradient step `phi = theta - beta * grad`, per matrix.
pub fn apply_step(theta: &[Matrix], grads: &[Matrix], beta: f64) -> Vec<Matrix> {
    theta
        .iter()
        .zip(grads)
        .map(|(t, g)| {
            let mut phi = t.clone();
            phi.axpy(-beta, g);
            phi
        })
        .collect()
}

/// Total derivative of an outer loss through one explicit inner gradient
/// step.
///
/// `build_inner` records the inner loss as a function of `theta`; its
/// gradient `g` defines the updated parameters `phi = theta - beta * g`.
/// `build_outer` records the outer loss as a function of `(theta, phi)` on a
/// second tape where both appear as independent params. With partials
/// `a = dL/dtheta` and `b = dL/dphi`:
///
/// * `First` treats `dphi/dtheta` as identity and returns `a + b`;
/// * `Second` returns the exact `a + b - beta * H b`, where `H b` is a
///   Hessian-vector product of the inner loss obtained by replaying the
///   inner tape in dual arithmetic.
///
/// The returned loss is the outer loss value.
pub fn grad_through_step<FI, FO>(
    theta: &[Matrix],
    beta: f64,
    order: GradOrder,
    build_inner: FI,
    build_outer: FO,
) -> Result<GradResult>
where
    FI: FnOnce(&mut Tape, &[NodeId]) -> Result<NodeId>,
    FO: FnOnce(&mut Tape, &[NodeId], &[NodeId]) -> Result<NodeId>,
{
    let mut inner_tape = Tape::new();
    let theta_inner: Vec<NodeId> = theta.iter().map(|m| inner_tape.param(m.clone())).collect();
    let inner_node = build_inner(&mut inner_tape, &theta_inner)?;
    let inner_grad = inner_tape.backward(inner_node)?;
    let phi = apply_step(theta, &inner_grad.grads, beta);

    let mut outer_tape = Tape::new();
    let theta_outer: Vec<NodeId> = theta.iter().map(|m| outer_tape.param(m.clone())).collect();
    let phi_outer: Vec<NodeId> = phi.iter().map(|m| outer_tape.param(m.clone())).collect();
    let outer_node = build_outer(&mut outer_tape, &theta_outer, &phi_outer)?;
    let outer_grad = outer_tape.backward(outer_node)?;
    let (part_theta, part_phi) = outer_grad.grads.split_at(theta.len());

    let mut grads: Vec<Matrix> = part_theta
        .iter()
        .zip(part_phi)
        .map(|(a, b)| {
            let mut s = a.clone();
            s.axpy(1.0, b);
            s
        })
        .collect();

    if order == GradOrder::Second && beta != 0.0 {
        let hb = inner_tape.hvp(inner_node, &theta_inner, part_phi)?;
        for (g, h) in grads.iter_mut().zip(&hb) {
            g.axpy(-beta, h);
        }
    }

    Ok(GradResult { loss: outer_grad.loss, grads })
}

/// Central finite differences of `loss` with respect to every entry of
/// `params`: `(f(x + eps) - f(x - eps)) / (2 eps)` per coordinate. Test
/// oracle; exercises only `loss`, never the tape.
pub fn finite_diff<F>(loss: F, params: &[Matrix], eps: f64) -> Result<GradResult>
where
    F: Fn(&[Matrix]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("finite_diff eps must be > 0, got {}", eps)));
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("finite_diff base loss".into()));
    }
    let mut work: Vec<Matrix> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let (rows, cols) = params[p].shape();
        let mut g = Matrix::zeros(rows, cols);
        for idx in 0..rows * cols {
            let orig = work[p].data()[idx];
            work[p].data_mut()[idx] = orig + eps;
            let up = loss(&work)?;
            work[p].data_mut()[idx] = orig - eps;
            let down = loss(&work)?;
            work[p].data_mut()[idx] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite("finite_diff perturbed loss".into()));
            }
            g.data_mut()[idx] = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(GradResult { loss: base, grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_mat(v: f64) -> Matrix {
        Matrix::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn square_gradient_by_hand() {
        // d/dx x^2 at x = 3 is 6.
        let mut t = Tape::new();
        let x = t.param(scalar_mat(3.0));
        let y = t.hadamard(x, x).unwrap();
        let gr = t.backward(y).unwrap();
        assert_eq!(gr.loss, 9.0);
        assert_eq!(gr.grads[0].get(0, 0), 6.0);
    }

    #[test]
    fn log_exp_round_trip() {
        let mut t = Tape::new();
        let x = t.param(scalar_mat(1.0));
        let e = t.exp(x).unwrap();
        let l = t.log(e).unwrap();
        assert!((t.scalar(l).unwrap() - 1.0).abs() < 1e-15);
        let gr = t.backward(l).unwrap();
        assert!((gr.grads[0].get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.param(Matrix::new(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
        let r = t.relu(x).unwrap();
        let s = t.sum(r).unwrap();
        let gr = t.backward(s).unwrap();
        assert_eq!(gr.grads[0].data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_y() {
        // For L = -sum(y*log softmax(z)), dL/dz = p - y.
        let mut t = Tape::new();
        let z = t.param(Matrix::new(1, 3, vec![0.2, -0.4, 1.1]).unwrap());
        let y = t.input(Matrix::new(1, 3, vec![0.0, 1.0, 0.0]).unwrap());
        let p = t.softmax(z).unwrap();
        let lp = t.log(p).unwrap();
        let yl = t.hadamard(y, lp).unwrap();
        let s = t.sum(yl).unwrap();
        let loss = t.scale(s, -1.0).unwrap();
        let gr = t.backward(loss).unwrap();
        let probs = t.value(p).clone();
        let expect = [probs.get(0, 0), probs.get(0, 1) - 1.0, probs.get(0, 2)];
        for (g, e) in gr.grads[0].data().iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(scalar_mat(2.0));
        let unused = t.param(Matrix::new(2, 2, vec![1.0; 4]).unwrap());
        let y = t.hadamard(x, x).unwrap();
        let gr = t.backward(y).unwrap();
        assert_eq!(gr.grads.len(), 2);
        assert_eq!(gr.grads[1], Matrix::zeros(2, 2));
        let _ = unused;
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(scalar_mat(5.0));
        let c = t.input(scalar_mat(7.0));
        let y = t.linear(&[(1.0, c)], 0.0).unwrap();
        let gr = t.backward(y).unwrap();
        assert_eq!(gr.loss, 7.0);
        assert_eq!(gr.grads[0].get(0, 0), 0.0);
        let _ = x;
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut t = Tape::new();
        let x = t.param(Matrix::new(1, 2, vec![1.0, 2.0]).unwrap());
        let r = t.relu(x).unwrap();
        assert!(t.backward(r).is_err());
    }

    #[test]
    fn matmul_shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.param(Matrix::new(2, 3, vec![0.0; 6]).unwrap());
        let b = t.param(Matrix::new(2, 2, vec![0.0; 4]).unwrap());
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn exp_overflow_is_a_non_finite_error() {
        let mut t = Tape::new();
        let x = t.param(scalar_mat(1e4));
        assert!(matches!(t.exp(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut t = Tape::new();
        let x = t.param(Matrix::new(2, 2, vec![0.3, -1.2, 0.7, 2.4]).unwrap());
        let w = t.param(Matrix::new(2, 2, vec![0.11, -0.5, 0.9, 0.02]).unwrap());
        let h = t.matmul(x, w).unwrap();
        let r = t.relu(h).unwrap();
        let p = t.softmax(r).unwrap();
        let l = t.log(p).unwrap();
        let m = t.mean(l).unwrap();
        let leaves: Vec<Matrix> = vec![t.value(x).clone(), t.value(w).clone()];
        let replayed = t.replay(&leaves).unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, &t.values[i], "node {} differs", i);
        }
        let _ = m;
    }

    #[test]
    fn finite_diff_square() {
        let g = finite_diff(|ps| Ok(ps[0].get(0, 0) * ps[0].get(0, 0)), &[scalar_mat(3.0)], 1e-6).unwrap();
        assert!((g.grads[0].get(0, 0) - 6.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let g = finite_diff(|_| Ok(4.2), &[scalar_mat(1.0)], 1e-6).unwrap();
        assert_eq!(g.grads[0].get(0, 0), 0.0);
    }

    #[test]
    fn finite_diff_rejects_bad_eps() {
        assert!(finite_diff(|_| Ok(0.0), &[scalar_mat(1.0)], 0.0).is_err());
    }

    #[test]
    fn hvp_of_quadratic_form() {
        // f(x) = x^T A x with A = [[2, 1], [1, 3]] via explicit products has
        // Hessian 2A; check Hv for v = (1, -1).
        let a = Matrix::new(2, 2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let mut t = Tape::new();
        let x = t.param(Matrix::new(1, 2, vec![0.4, -0.2]).unwrap());
        let am = t.input(a);
        let xa = t.matmul(x, am).unwrap();
        let q = t.hadamard(xa, x).unwrap();
        let f = t.sum(q).unwrap();
        let v = Matrix::new(1, 2, vec![1.0, -1.0]).unwrap();
        let hv = t.hvp(f, &[x], &[v]).unwrap();
        // 2A v = 2*[2-1, 1-3] = [2, -4]
        assert!((hv[0].get(0, 0) - 2.0).abs() < 1e-10);
        assert!((hv[0].get(0, 1) + 4.0).abs() < 1e-10);
    }

    #[test]
    fn grad_through_step_quadratic_by_hand() {
        // Inner: L_in(t) = t^2, so phi = t - beta*2t = (1 - 2 beta) t.
        // Outer: L_out = phi^2, so L(t) = (1 - 2 beta)^2 t^2 and
        // dL/dt = 2 (1 - 2 beta)^2 t exactly.
        let theta = 1.7;
        let beta = 0.3;
        let build_inner = |t: &mut Tape, th: &[NodeId]| t.hadamard(th[0], th[0]);
        let build_outer = |t: &mut Tape, _th: &[NodeId], ph: &[NodeId]| t.hadamard(ph[0], ph[0]);
        let exact = grad_through_step(&[scalar_mat(theta)], beta, GradOrder::Second, build_inner, build_outer).unwrap();
        let want = 2.0 * (1.0 - 2.0 * beta) * (1.0 - 2.0 * beta) * theta;
        assert!((exact.grads[0].get(0, 0) - want).abs() < 1e-12, "second order: {} vs {}", exact.grads[0].get(0, 0), want);

        // First order drops the -beta*H*b term: a + b = 2 phi.
        let first = grad_through_step(
            &[scalar_mat(theta)],
            beta,
            GradOrder::First,
            |t: &mut Tape, th: &[NodeId]| t.hadamard(th[0], th[0]),
            |t: &mut Tape, _th: &[NodeId], ph: &[NodeId]| t.hadamard(ph[0], ph[0]),
        )
        .unwrap();
        let want_first = 2.0 * (1.0 - 2.0 * beta) * theta;
        assert!((first.grads[0].get(0, 0) - want_first).abs() < 1e-12);
        assert!((exact.grads[0].get(0, 0) - want_first).abs() > 1e-3, "orders should differ here");
    }

    #[test]
    fn grad_through_step_zero_beta_matches_plain_backward() {
        // With beta = 0, phi = theta and both orders equal the gradient of
        // L(theta, theta).
        let x0 = Matrix::new(1, 2, vec![0.6, -0.9]).unwrap();
        for order in [GradOrder::First, GradOrder::Second] {
            let got = grad_through_step(
                &[x0.clone()],
                0.0,
                order,
                |t: &mut Tape, th: &[NodeId]| {
                    let s = t.hadamard(th[0], th[0])?;
                    t.sum(s)
                },
                |t: &mut Tape, th: &[NodeId], ph: &[NodeId]| {
                    let pr = t.hadamard(th[0], ph[0])?;
                    t.sum(pr)
                },
            )
            .unwrap();
            // L = sum(theta * theta) so dL/dtheta = 2 theta.
            for c in 0..2 {
                assert!((got.grads[0].get(0, c) - 2.0 * x0.get(0, c)).abs() < 1e-14);
            }
        }
    }
}
