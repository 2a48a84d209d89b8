//! Tape-style reverse-mode differentiation over a fixed operation set.
//!
//! Operations are evaluated eagerly as nodes are appended, so the tape is
//! topologically ordered by construction and `backward` is a single reverse
//! sweep. The op set is exactly what the models need: matrix product,
//! pointwise activations, stable softmax and log-sum-exp, row concatenation,
//! sum/mean reductions, embedding lookup, elementwise add/mul, and two small
//! structural helpers (reshape, binary select for zoneout).
//!
//! The tape can be re-evaluated after mutating leaf values (`set_leaf` +
//! `recompute`), which is what finite-difference gradient checking uses.

use std::collections::HashMap;

use super::array::NumArray;
use super::real::Real;
use super::ComputeError;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
}

#[derive(Debug, Clone)]
enum Op {
    /// Leaf value: a named trainable parameter or an anonymous input.
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Multiply by a compile-time constant factor.
    Scale(NodeId, f64),
    /// Broadcast-multiply an array by a `[1, 1]` node.
    ScalarMul(NodeId, NodeId),
    Pointwise(NodeId, Activation),
    Softmax(NodeId),
    LogSumExp(NodeId),
    /// Stack inputs vertically; all must share a column count.
    ConcatRows(Vec<NodeId>),
    SumAll(NodeId),
    MeanRows(NodeId),
    /// Gather rows of a table node.
    Lookup(NodeId, Vec<usize>),
    Reshape(NodeId),
    /// `mask` is a binary constant; picks `a` where 1, `b` where 0.
    /// Routed copies are bitwise, which the zoneout contract relies on.
    Select { mask: NodeId, a: NodeId, b: NodeId },
}

struct NodeRecord<R: Real> {
    op: Op,
    value: NumArray<R>,
}

pub struct Graph<R: Real> {
    nodes: Vec<NodeRecord<R>>,
    grads: Vec<Option<NumArray<R>>>,
    params: Vec<(String, NodeId)>,
    by_name: HashMap<String, NodeId>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &NumArray<R> {
        &self.nodes[id].value
    }

    /// Gradient of the last `backward` output with respect to node `id`.
    /// `None` before `backward` runs, or for nodes the output does not reach.
    pub fn grad(&self, id: NodeId) -> Option<&NumArray<R>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    fn push(&mut self, op: Op, value: NumArray<R>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(NodeRecord { op, value });
        self.grads.push(None);
        id
    }

    /// Anonymous constant/input leaf.
    pub fn input(&mut self, value: NumArray<R>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Named trainable leaf. Gradients for it appear in `param_grads`.
    pub fn param(&mut self, name: &str, value: NumArray<R>) -> Result<NodeId, ComputeError> {
        if self.by_name.contains_key(name) {
            return Err(ComputeError::Usage(format!(
                "parameter {name:?} registered twice"
            )));
        }
        let id = self.push(Op::Leaf, value);
        self.params.push((name.to_string(), id));
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id].value;
        (v.rows(), v.cols())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ComputeError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(ComputeError::Dimension(format!(
                "matmul inner extents differ: [{m}, {k}] x [{k2}, {n}]"
            )));
        }
        let value = matmul_values(&self.nodes[a].value, &self.nodes[b].value);
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ComputeError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(ComputeError::Dimension(format!(
                "add shapes differ: [{}, {}] vs [{}, {}]",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        let value = zip_values(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ComputeError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(ComputeError::Dimension(format!(
                "mul shapes differ: [{}, {}] vs [{}, {}]",
                sa.0, sa.1, sb.0, sb.1
            )));
        }
        let value = zip_values(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let f = R::from_f64(factor);
        let value = self.nodes[a].value.map(|v| v * f);
        self.push(Op::Scale(a, factor), value)
    }

    /// `a * s` where `s` is a `[1, 1]` node broadcast over `a`.
    pub fn scalar_mul(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, ComputeError> {
        if !self.nodes[s].value.is_scalar() {
            return Err(ComputeError::Dimension(format!(
                "scalar_mul factor must be [1, 1], got {:?}",
                self.nodes[s].value.shape()
            )));
        }
        let sv = self.nodes[s].value.scalar();
        let value = self.nodes[a].value.map(|v| v * sv);
        Ok(self.push(Op::ScalarMul(a, s), value))
    }

    pub fn pointwise(&mut self, f: Activation, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(|v| apply_activation(f, v));
        self.push(Op::Pointwise(a, f), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.pointwise(Activation::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.pointwise(Activation::Tanh, a)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.pointwise(Activation::Relu, a)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.pointwise(Activation::Softplus, a)
    }

    /// Softmax over all entries, max-subtracted for stability.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, ComputeError> {
        let value = softmax_values(&self.nodes[a].value);
        Ok(self.push(Op::Softmax(a), value))
    }

    /// `log(sum(exp(x)))` over all entries as a `[1, 1]` node.
    pub fn log_sum_exp(&mut self, a: NodeId) -> NodeId {
        let value = NumArray::scalar_value(log_sum_exp_value(&self.nodes[a].value));
        self.push(Op::LogSumExp(a), value)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, ComputeError> {
        if parts.is_empty() {
            return Err(ComputeError::Dimension(
                "concat of zero arrays".to_string(),
            ));
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(ComputeError::Dimension(format!(
                    "concat column counts differ: {cols} vs {c}"
                )));
            }
            rows += r;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.nodes[p].value.data());
        }
        let value = NumArray::from_raw(rows, cols, data);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: R = self.nodes[a].value.data().iter().copied().sum();
        self.push(Op::SumAll(a), NumArray::scalar_value(s))
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a].value;
        let (m, n) = (v.rows(), v.cols());
        let inv = R::from_f64(1.0 / m as f64);
        let mut out = vec![R::zero(); n];
        for r in 0..m {
            for (o, &x) in out.iter_mut().zip(v.row(r)) {
                *o = *o + x;
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        self.push(Op::MeanRows(a), NumArray::from_raw(1, n, out))
    }

    /// Row gather. The backward pass scatters additively, so repeated ids
    /// accumulate gradient.
    pub fn lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, ComputeError> {
        let (rows, cols) = self.shape(table);
        if ids.is_empty() {
            return Err(ComputeError::Dimension("lookup of zero ids".to_string()));
        }
        for &id in ids {
            if id >= rows {
                return Err(ComputeError::Vocabulary { id, size: rows });
            }
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            data.extend_from_slice(self.nodes[table].value.row(id));
        }
        let value = NumArray::from_raw(ids.len(), cols, data);
        Ok(self.push(Op::Lookup(table, ids.to_vec()), value))
    }

    /// Reinterpret the row-major buffer under new extents. Free of numeric
    /// content; used to turn `[1, d]` lookup rows into `[d, 1]` columns.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId, ComputeError> {
        let v = &self.nodes[a].value;
        if rows * cols != v.len() || rows == 0 || cols == 0 {
            return Err(ComputeError::Dimension(format!(
                "cannot reshape {:?} to [{rows}, {cols}]",
                v.shape()
            )));
        }
        let value = NumArray::from_raw(rows, cols, v.data().to_vec());
        Ok(self.push(Op::Reshape(a), value))
    }

    /// Elementwise binary select: `mask == 1 ? a : b`. Selected entries are
    /// copied bitwise. The mask must contain only 0 and 1 and gets no
    /// gradient.
    pub fn select(&mut self, mask: NodeId, a: NodeId, b: NodeId) -> Result<NodeId, ComputeError> {
        let sm = self.shape(mask);
        if sm != self.shape(a) || sm != self.shape(b) {
            return Err(ComputeError::Dimension(format!(
                "select shapes differ: mask [{}, {}], a {:?}, b {:?}",
                sm.0,
                sm.1,
                self.nodes[a].value.shape(),
                self.nodes[b].value.shape()
            )));
        }
        let m = self.nodes[mask].value.data();
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let data = m
            .iter()
            .zip(av.iter().zip(bv.iter()))
            .map(|(&mi, (&x, &y))| if mi == R::one() { x } else { y })
            .collect();
        let value = NumArray::from_raw(sm.0, sm.1, data);
        Ok(self.push(Op::Select { mask, a, b }, value))
    }

    /// Replace a leaf's value. Fails on non-leaves or shape changes; call
    /// `recompute` afterwards to refresh downstream values.
    pub fn set_leaf(&mut self, id: NodeId, value: NumArray<R>) -> Result<(), ComputeError> {
        match self.nodes[id].op {
            Op::Leaf => {}
            _ => {
                return Err(ComputeError::Usage(format!(
                    "node {id} is not a leaf"
                )))
            }
        }
        if value.shape() != self.nodes[id].value.shape() {
            return Err(ComputeError::Dimension(format!(
                "leaf shape {:?} cannot change to {:?}",
                self.nodes[id].value.shape(),
                value.shape()
            )));
        }
        self.nodes[id].value = value;
        Ok(())
    }

    /// Re-evaluate every non-leaf node in tape order.
    pub fn recompute(&mut self) {
        for i in 0..self.nodes.len() {
            let value = match &self.nodes[i].op {
                Op::Leaf => continue,
                Op::MatMul(a, b) => matmul_values(&self.nodes[*a].value, &self.nodes[*b].value),
                Op::Add(a, b) => {
                    zip_values(&self.nodes[*a].value, &self.nodes[*b].value, |x, y| x + y)
                }
                Op::Mul(a, b) => {
                    zip_values(&self.nodes[*a].value, &self.nodes[*b].value, |x, y| x * y)
                }
                Op::Scale(a, f) => {
                    let f = R::from_f64(*f);
                    self.nodes[*a].value.map(|v| v * f)
                }
                Op::ScalarMul(a, s) => {
                    let sv = self.nodes[*s].value.scalar();
                    self.nodes[*a].value.map(|v| v * sv)
                }
                Op::Pointwise(a, f) => {
                    let f = *f;
                    self.nodes[*a].value.map(|v| apply_activation(f, v))
                }
                Op::Softmax(a) => softmax_values(&self.nodes[*a].value),
                Op::LogSumExp(a) => {
                    NumArray::scalar_value(log_sum_exp_value(&self.nodes[*a].value))
                }
                Op::ConcatRows(parts) => {
                    let cols = self.nodes[parts[0]].value.cols();
                    let rows: usize = parts.iter().map(|&p| self.nodes[p].value.rows()).sum();
                    let mut data = Vec::with_capacity(rows * cols);
                    for &p in parts {
                        data.extend_from_slice(self.nodes[p].value.data());
                    }
                    NumArray::from_raw(rows, cols, data)
                }
                Op::SumAll(a) => {
                    NumArray::scalar_value(self.nodes[*a].value.data().iter().copied().sum())
                }
                Op::MeanRows(a) => {
                    let v = &self.nodes[*a].value;
                    let (m, n) = (v.rows(), v.cols());
                    let inv = R::from_f64(1.0 / m as f64);
                    let mut out = vec![R::zero(); n];
                    for r in 0..m {
                        for (o, &x) in out.iter_mut().zip(v.row(r)) {
                            *o = *o + x;
                        }
                    }
                    for o in out.iter_mut() {
                        *o = *o * inv;
                    }
                    NumArray::from_raw(1, n, out)
                }
                Op::Lookup(table, ids) => {
                    let cols = self.nodes[*table].value.cols();
                    let mut data = Vec::with_capacity(ids.len() * cols);
                    for &id in ids {
                        data.extend_from_slice(self.nodes[*table].value.row(id));
                    }
                    NumArray::from_raw(ids.len(), cols, data)
                }
                Op::Reshape(a) => {
                    let (r, c) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                    NumArray::from_raw(r, c, self.nodes[*a].value.data().to_vec())
                }
                Op::Select { mask, a, b } => {
                    let m = self.nodes[*mask].value.data();
                    let av = self.nodes[*a].value.data();
                    let bv = self.nodes[*b].value.data();
                    let data = m
                        .iter()
                        .zip(av.iter().zip(bv.iter()))
                        .map(|(&mi, (&x, &y))| if mi == R::one() { x } else { y })
                        .collect();
                    let (r, c) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                    NumArray::from_raw(r, c, data)
                }
            };
            self.nodes[i].value = value;
        }
        // Stale adjoints from a previous backward must not be read against
        // the refreshed values.
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    /// Reverse sweep from a scalar output. Fills per-node adjoints; query
    /// them with `grad` or collect parameter gradients with `param_grads`.
    pub fn backward(&mut self, output: NodeId) -> Result<(), ComputeError> {
        if !self.nodes[output].value.is_scalar() {
            return Err(ComputeError::NonScalarOutput(
                self.nodes[output].value.shape().to_vec(),
            ));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[output] = Some(NumArray::scalar_value(R::one()));

        for i in (0..=output).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            match self.nodes[i].op.clone() {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    // dA = dC . B^T, dB = A^T . dC
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    {
                        let da = self.grad_slot(a, m, k);
                        for r in 0..m {
                            for c in 0..n {
                                let g = gout.at(r, c);
                                if g == R::zero() {
                                    continue;
                                }
                                for j in 0..k {
                                    let v = da.at(r, j) + g * bv.at(j, c);
                                    da.set(r, j, v);
                                }
                            }
                        }
                    }
                    {
                        let db = self.grad_slot(b, k, n);
                        for r in 0..m {
                            for j in 0..k {
                                let a_rj = av.at(r, j);
                                if a_rj == R::zero() {
                                    continue;
                                }
                                for c in 0..n {
                                    let v = db.at(j, c) + a_rj * gout.at(r, c);
                                    db.set(j, c, v);
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &gout);
                    self.accumulate(b, &gout);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a].value.clone();
                    let bv = self.nodes[b].value.clone();
                    let ga = zip_values(&gout, &bv, |g, y| g * y);
                    let gb = zip_values(&gout, &av, |g, x| g * x);
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::Scale(a, f) => {
                    let f = R::from_f64(f);
                    let ga = gout.map(|g| g * f);
                    self.accumulate(a, &ga);
                }
                Op::ScalarMul(a, s) => {
                    let sv = self.nodes[s].value.scalar();
                    let av = self.nodes[a].value.clone();
                    let ga = gout.map(|g| g * sv);
                    let gs: R = gout
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&g, &x)| g * x)
                        .sum();
                    self.accumulate(a, &ga);
                    self.accumulate(s, &NumArray::scalar_value(gs));
                }
                Op::Pointwise(a, f) => {
                    let xin = self.nodes[a].value.clone();
                    let yout = self.nodes[i].value.clone();
                    let mut data = Vec::with_capacity(xin.len());
                    for ((&g, &x), &y) in gout.data().iter().zip(xin.data()).zip(yout.data()) {
                        data.push(g * activation_derivative(f, x, y));
                    }
                    let ga = NumArray::from_raw(xin.rows(), xin.cols(), data);
                    self.accumulate(a, &ga);
                }
                Op::Softmax(a) => {
                    // dx = y * (g - <g, y>)
                    let y = self.nodes[i].value.clone();
                    let dot: R = gout
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &yv)| g * yv)
                        .sum();
                    let ga = zip_values(&gout, &y, |g, yv| yv * (g - dot));
                    self.accumulate(a, &ga);
                }
                Op::LogSumExp(a) => {
                    let g = gout.scalar();
                    let sm = softmax_values(&self.nodes[a].value);
                    let ga = sm.map(|p| p * g);
                    self.accumulate(a, &ga);
                }
                Op::ConcatRows(parts) => {
                    let cols = gout.cols();
                    let mut offset = 0;
                    for &p in &parts {
                        let rows = self.nodes[p].value.rows();
                        let chunk = NumArray::from_raw(
                            rows,
                            cols,
                            gout.data()[offset * cols..(offset + rows) * cols].to_vec(),
                        );
                        self.accumulate(p, &chunk);
                        offset += rows;
                    }
                }
                Op::SumAll(a) => {
                    let g = gout.scalar();
                    let (r, c) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                    let ga = NumArray::filled(r, c, g);
                    self.accumulate(a, &ga);
                }
                Op::MeanRows(a) => {
                    let (r, c) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                    let inv = R::from_f64(1.0 / r as f64);
                    let mut data = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        data.extend(gout.data().iter().map(|&g| g * inv));
                    }
                    let ga = NumArray::from_raw(r, c, data);
                    self.accumulate(a, &ga);
                }
                Op::Lookup(table, ids) => {
                    let (rows, cols) =
                        (self.nodes[table].value.rows(), self.nodes[table].value.cols());
                    let gt = self.grad_slot(table, rows, cols);
                    for (k, &id) in ids.iter().enumerate() {
                        for c in 0..cols {
                            let v = gt.at(id, c) + gout.at(k, c);
                            gt.set(id, c, v);
                        }
                    }
                }
                Op::Reshape(a) => {
                    let (r, c) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                    let ga = NumArray::from_raw(r, c, gout.data().to_vec());
                    self.accumulate(a, &ga);
                }
                Op::Select { mask, a, b } => {
                    let mv = self.nodes[mask].value.clone();
                    let ga = zip_values(&gout, &mv, |g, m| if m == R::one() { g } else { R::zero() });
                    let gb = zip_values(&gout, &mv, |g, m| if m == R::one() { R::zero() } else { g });
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
            }
            // Keep the adjoint for later inspection (inputs need it for
            // attribution; parameters for param_grads).
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn grad_slot(&mut self, id: NodeId, rows: usize, cols: usize) -> &mut NumArray<R> {
        if self.grads[id].is_none() {
            self.grads[id] = Some(NumArray::zeros(rows, cols));
        }
        self.grads[id].as_mut().unwrap()
    }

    fn accumulate(&mut self, id: NodeId, g: &NumArray<R>) {
        match &mut self.grads[id] {
            Some(existing) => existing.add_scaled(g, R::one()),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Gradients for every registered parameter, zero-filled for parameters
    /// the output does not reach. Call after `backward`.
    pub fn param_grads(&self) -> std::collections::BTreeMap<String, NumArray<R>> {
        let mut out = std::collections::BTreeMap::new();
        for (name, id) in &self.params {
            let g = match &self.grads[*id] {
                Some(g) => g.clone(),
                None => {
                    let v = &self.nodes[*id].value;
                    NumArray::zeros(v.rows(), v.cols())
                }
            };
            out.insert(name.clone(), g);
        }
        out
    }
}

fn apply_activation<R: Real>(f: Activation, x: R) -> R {
    match f {
        Activation::Sigmoid => sigmoid_scalar(x),
        Activation::Tanh => x.tanh(),
        Activation::Relu => {
            if x > R::zero() {
                x
            } else {
                R::zero()
            }
        }
        Activation::Softplus => softplus_scalar(x),
    }
}

fn activation_derivative<R: Real>(f: Activation, x: R, y: R) -> R {
    match f {
        Activation::Sigmoid => y * (R::one() - y),
        Activation::Tanh => R::one() - y * y,
        Activation::Relu => {
            if x > R::zero() {
                R::one()
            } else {
                R::zero()
            }
        }
        Activation::Softplus => sigmoid_scalar(x),
    }
}

/// 1 / (1 + e^-x) without overflow on either tail.
pub fn sigmoid_scalar<R: Real>(x: R) -> R {
    if x >= R::zero() {
        let e = (-x).exp();
        R::one() / (R::one() + e)
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|).
pub fn softplus_scalar<R: Real>(x: R) -> R {
    let m = if x > R::zero() { x } else { R::zero() };
    m + (-x.abs()).exp().ln_1p()
}

fn matmul_values<R: Real>(a: &NumArray<R>, b: &NumArray<R>) -> NumArray<R> {
    let (m, k) = (a.rows(), a.cols());
    let _ = k;
    let n = b.cols();
    let mut out = vec![R::zero(); m * n];
    for r in 0..m {
        let arow = a.row(r);
        let orow = &mut out[r * n..(r + 1) * n];
        for (j, &a_rj) in arow.iter().enumerate() {
            if a_rj == R::zero() {
                continue;
            }
            let brow = b.row(j);
            for (o, &b_jc) in orow.iter_mut().zip(brow) {
                *o = *o + a_rj * b_jc;
            }
        }
    }
    NumArray::from_raw(m, n, out)
}

fn zip_values<R: Real>(a: &NumArray<R>, b: &NumArray<R>, f: impl Fn(R, R) -> R) -> NumArray<R> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    NumArray::from_raw(a.rows(), a.cols(), data)
}

fn softmax_values<R: Real>(x: &NumArray<R>) -> NumArray<R> {
    let max = x
        .data()
        .iter()
        .copied()
        .fold(R::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut out: Vec<R> = x.data().iter().map(|&v| (v - max).exp()).collect();
    let sum: R = out.iter().copied().sum();
    for o in out.iter_mut() {
        *o = *o / sum;
    }
    NumArray::from_raw(x.rows(), x.cols(), out)
}

fn log_sum_exp_value<R: Real>(x: &NumArray<R>) -> R {
    let max = x
        .data()
        .iter()
        .copied()
        .fold(R::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum: R = x.data().iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> NumArray<f64> {
        NumArray::column_from_f64(values).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::<f64>::new();
        let i2 = g.input(NumArray::new(2, 2, vec![1., 0., 0., 1.]).unwrap());
        let a = g.input(NumArray::new(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn matmul_orthogonal_selection() {
        let mut g = Graph::<f64>::new();
        let a = g.input(NumArray::new(1, 2, vec![1., 0.]).unwrap());
        let b = g.input(NumArray::new(2, 1, vec![0., 5.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[0.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(NumArray::zeros(2, 3));
        let b = g.input(NumArray::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        // Brute-force i/j/k loop, written independently of the production path.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut expect = vec![0.0f64; 3 * 2];
        for i in 0..3 {
            for j in 0..2 {
                for k in 0..4 {
                    expect[i * 2 + j] += a[i * 4 + k] * b[k * 2 + j];
                }
            }
        }
        let mut g = Graph::<f64>::new();
        let na = g.input(NumArray::new(3, 4, a).unwrap());
        let nb = g.input(NumArray::new(4, 2, b).unwrap());
        let nc = g.matmul(na, nb).unwrap();
        for (got, want) in g.value(nc).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_at_zero_and_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.input(col(&[0.0]));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).scalar(), 0.5);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert!((g.grad(x).unwrap().scalar() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn tanh_is_odd() {
        let mut g = Graph::<f64>::new();
        for &v in &[0.0, 0.3, 1.7, -2.4] {
            let x = g.input(col(&[v]));
            let nx = g.input(col(&[-v]));
            let y = g.tanh(x);
            let yn = g.tanh(nx);
            assert!((g.value(y).scalar() + g.value(yn).scalar()).abs() < 1e-15);
        }
        let x = g.input(col(&[0.0]));
        let y = g.tanh(x);
        assert_eq!(g.value(y).scalar(), 0.0);
    }

    #[test]
    fn sigmoid_complement_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::<f64>::new();
        for _ in 0..100 {
            let v: f64 = rng.gen_range(-30.0..30.0);
            let a = g.input(col(&[v]));
            let b = g.input(col(&[-v]));
            let sa = g.sigmoid(a);
            let sb = g.sigmoid(b);
            let sum = g.value(sa).scalar() + g.value(sb).scalar();
            assert!((sum - 1.0).abs() < 1e-12, "x={v} sum={sum}");
        }
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut g = Graph::<f64>::new();
        let x = g.input(col(&[0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);

        let big = g.input(col(&[1000.0, 0.0]));
        let yb = g.softmax(big).unwrap();
        let v = g.value(yb);
        assert!(v.all_finite());
        assert!(v.data()[0] > 1.0 - 1e-12 && v.data()[1] < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let shifted: Vec<f64> = vals.iter().map(|v| v + 13.25).collect();
        let mut g = Graph::<f64>::new();
        let a = g.input(col(&vals));
        let b = g.input(col(&shifted));
        let ya = g.softmax(a).unwrap();
        let yb = g.softmax(b).unwrap();
        for (x, y) in g.value(ya).data().iter().zip(g.value(yb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lookup_gather_semantics() {
        let mut g = Graph::<f64>::new();
        let table = g.input(NumArray::new(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let got = g.lookup(table, &[1, 1, 0]).unwrap();
        assert_eq!(g.value(got).data(), &[3., 4., 3., 4., 1., 2.]);
    }

    #[test]
    fn lookup_out_of_range_names_id() {
        let mut g = Graph::<f64>::new();
        let table = g.input(NumArray::zeros(3, 2));
        let err = g.lookup(table, &[0, 5]).unwrap_err();
        assert!(matches!(err, ComputeError::Vocabulary { id: 5, size: 3 }));
    }

    #[test]
    fn lookup_repeated_id_doubles_gradient() {
        let mut g = Graph::<f64>::new();
        let table = g
            .param("t", NumArray::new(2, 2, vec![1., 2., 3., 4.]).unwrap())
            .unwrap();
        let rows = g.lookup(table, &[0, 0]).unwrap();
        let s = g.sum_all(rows);
        g.backward(s).unwrap();
        let gt = g.grad(table).unwrap();
        assert_eq!(gt.row(0), &[2.0, 2.0]);
        assert_eq!(gt.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn full_vocab_lookup_recovers_table() {
        let mut g = Graph::<f64>::new();
        let table = g.input(NumArray::new(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let got = g.lookup(table, &[0, 1, 2]).unwrap();
        assert_eq!(g.value(got).data(), g.value(table).data());
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        // loss = w^T x  =>  d loss / d w = x exactly
        let mut g = Graph::<f64>::new();
        let w = g.param("w", NumArray::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        let x = g.input(col(&[3.0, 4.0, 5.0]));
        let y = g.matmul(w, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let _unused = g.param("unused", NumArray::zeros(2, 2)).unwrap();
        let w = g.param("w", NumArray::new(1, 1, vec![3.0]).unwrap()).unwrap();
        let y = g.scale(w, 2.0);
        g.backward(y).unwrap();
        let grads = g.param_grads();
        assert_eq!(grads["unused"].data(), &[0.0; 4]);
        assert_eq!(grads["w"].data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut g = Graph::<f64>::new();
        let x = g.input(col(&[1.0, 2.0]));
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, ComputeError::NonScalarOutput(_)));
    }

    #[test]
    fn backward_is_linear_over_graph_sum() {
        // Gradient of (f + g) equals grad f + grad g computed separately.
        let build = |g: &mut Graph<f64>, w: NodeId, which: u8| -> NodeId {
            let x = g.input(col(&[1.0, -2.0]));
            let y = g.mul(w, x).unwrap();
            let s = g.sum_all(y);
            if which == 0 {
                s
            } else {
                let t = g.tanh(w);
                let u = g.sum_all(t);
                g.add(s, u).unwrap()
            }
        };
        let wval = col(&[0.3, 0.7]);

        let mut g1 = Graph::<f64>::new();
        let w1 = g1.param("w", wval.clone()).unwrap();
        let f1 = build(&mut g1, w1, 0);
        g1.backward(f1).unwrap();
        let grad_f = g1.param_grads();

        let mut g2 = Graph::<f64>::new();
        let w2 = g2.param("w", wval.clone()).unwrap();
        let f2 = build(&mut g2, w2, 1);
        g2.backward(f2).unwrap();
        let grad_sum = g2.param_grads();

        let mut g3 = Graph::<f64>::new();
        let w3 = g3.param("w", wval.clone()).unwrap();
        let t = g3.tanh(w3);
        let u = g3.sum_all(t);
        g3.backward(u).unwrap();
        let grad_g = g3.param_grads();

        for i in 0..2 {
            let lhs = grad_sum["w"].data()[i];
            let rhs = grad_f["w"].data()[i] + grad_g["w"].data()[i];
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let mut g = Graph::<f64>::new();
            let w = g
                .param("w", NumArray::new(2, 2, vec![0.1, -0.2, 0.3, 0.4]).unwrap())
                .unwrap();
            let x = g.input(col(&[1.5, -0.6]));
            let h = g.matmul(w, x).unwrap();
            let a = g.tanh(h);
            let s = g.sum_all(a);
            g.backward(s).unwrap();
            (
                g.value(s).scalar().to_bits(),
                g.param_grads()["w"]
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn select_copies_bitwise() {
        let mut g = Graph::<f64>::new();
        let mask = g.input(col(&[1.0, 0.0, 1.0]));
        let a = g.input(col(&[-0.0, 2.0, 3.0]));
        let b = g.input(col(&[9.0, 8.0, 7.0]));
        let out = g.select(mask, a, b).unwrap();
        let v = g.value(out).data();
        assert_eq!(v[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(v[1], 8.0);
        assert_eq!(v[2], 3.0);
    }

    #[test]
    fn recompute_tracks_leaf_updates() {
        let mut g = Graph::<f64>::new();
        let x = g.input(col(&[2.0]));
        let y = g.scale(x, 3.0);
        assert_eq!(g.value(y).scalar(), 6.0);
        g.set_leaf(x, col(&[5.0])).unwrap();
        g.recompute();
        assert_eq!(g.value(y).scalar(), 15.0);
    }
}
