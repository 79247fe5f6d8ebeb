//! Reverse-mode differentiation over an eagerly evaluated tape.
//!
//! Every operation appends a node whose value is computed immediately with
//! the numeric kernels, so intermediate values (needed e.g. for in-batch
//! negative selection) can be inspected while the graph is still being
//! built. `backward` then walks the tape in reverse, accumulating adjoints.
//! Nodes only ever reference earlier nodes, so tape order is already a
//! topological order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::{self, Real, Tensor};

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone)]
enum Op<F> {
    /// Constant or bound parameter; no inputs.
    Input,
    /// Row `i` of a matrix, as a column vector.
    Row(ValueId, usize),
    MatVec(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, F),
    Sigmoid(ValueId),
    Tanh(ValueId),
    Abs(ValueId),
    Relu(ValueId),
    Dot(ValueId, ValueId),
    SumSq(ValueId),
    Rsqrt(ValueId),
    Softmax(ValueId),
    Concat(ValueId, ValueId),
    LogFloored(ValueId, F),
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

#[derive(Debug)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

/// Per-node adjoints produced by [`Graph::backward`].
pub struct Grads<F> {
    by_node: Vec<Tensor<F>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, id: ValueId) -> &Tensor<F> {
        &self.by_node[id.0]
    }
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: ValueId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: ValueId) -> F {
        self.nodes[id.0].value.item()
    }

    pub fn constant(&mut self, t: Tensor<F>) -> ValueId {
        self.push(t, Op::Input)
    }

    pub fn scalar(&mut self, v: F) -> ValueId {
        self.push(Tensor::scalar(v), Op::Input)
    }

    pub fn row(&mut self, src: ValueId, idx: usize) -> Result<ValueId> {
        let m = self.value(src);
        if idx >= m.rows() {
            return Err(Error::Dimension(format!(
                "row {idx} out of {} rows",
                m.rows()
            )));
        }
        let v = Tensor::vector(m.row(idx).to_vec());
        Ok(self.push(v, Op::Row(src, idx)))
    }

    pub fn matvec(&mut self, m: ValueId, v: ValueId) -> Result<ValueId> {
        let out = numeric::matvec(self.value(m), self.value(v))?;
        Ok(self.push(out, Op::MatVec(m, v)))
    }

    /// `M v + b`.
    pub fn affine(&mut self, m: ValueId, v: ValueId, b: ValueId) -> Result<ValueId> {
        let mv = self.matvec(m, v)?;
        self.add(mv, b)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = numeric::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = numeric::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = numeric::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: ValueId, c: F) -> ValueId {
        let out = numeric::scale(self.value(a), c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let out = self.value(a).map(|x| x.sigmoid());
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: ValueId) -> ValueId {
        let out = self.value(a).map(|x| x.abs());
        self.push(out, Op::Abs(a))
    }

    /// Hinge `max(0, x)` elementwise. Subgradient 0 at the kink.
    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let out = self.value(a).map(|x| x.max(F::ZERO));
        self.push(out, Op::Relu(a))
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = numeric::dot(self.value(a), self.value(b))?;
        Ok(self.push(Tensor::scalar(out), Op::Dot(a, b)))
    }

    /// Sum of squares of all entries, as a scalar node.
    pub fn sum_sq(&mut self, a: ValueId) -> ValueId {
        let out = numeric::sum_sq(self.value(a));
        self.push(Tensor::scalar(out), Op::SumSq(a))
    }

    /// Elementwise `x^(-1/2)`.
    pub fn rsqrt(&mut self, a: ValueId) -> ValueId {
        let out = self.value(a).map(|x| F::ONE / x.sqrt());
        self.push(out, Op::Rsqrt(a))
    }

    pub fn softmax(&mut self, a: ValueId) -> ValueId {
        let out = numeric::softmax(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    /// Vertical concatenation of two column vectors.
    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.is_vector() || !vb.is_vector() {
            return Err(Error::Dimension("concat expects vectors".to_string()));
        }
        let mut data = va.as_slice().to_vec();
        data.extend_from_slice(vb.as_slice());
        Ok(self.push(Tensor::vector(data), Op::Concat(a, b)))
    }

    /// Elementwise `ln(x + floor)`; the floor guards exact zeros under a log.
    pub fn log_floored(&mut self, a: ValueId, floor: F) -> ValueId {
        let out = self.value(a).map(|x| (x + floor).ln());
        self.push(out, Op::LogFloored(a, floor))
    }

    /// Cosine similarity of two vector nodes as a scalar node. Zero-norm
    /// inputs are rejected here, while values are known.
    pub fn cosine(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if numeric::norm2(self.value(a)) == F::ZERO || numeric::norm2(self.value(b)) == F::ZERO {
            return Err(Error::Degenerate(
                "cosine of a zero-norm vector".to_string(),
            ));
        }
        let d = self.dot(a, b)?;
        let na = self.sum_sq(a);
        let nb = self.sum_sq(b);
        let ra = self.rsqrt(na);
        let rb = self.rsqrt(nb);
        let t = self.mul(d, ra)?;
        self.mul(t, rb)
    }

    /// Sum of several same-shape nodes.
    pub fn sum_many(&mut self, ids: &[ValueId]) -> Result<ValueId> {
        let (&first, rest) = ids
            .split_first()
            .ok_or_else(|| Error::Dimension("sum of no nodes".to_string()))?;
        let mut acc = first;
        for &id in rest {
            acc = self.add(acc, id)?;
        }
        Ok(acc)
    }

    /// Arithmetic mean of several same-shape nodes.
    pub fn mean_many(&mut self, ids: &[ValueId]) -> Result<ValueId> {
        let total = self.sum_many(ids)?;
        Ok(self.scale(total, F::ONE / F::from_f64(ids.len() as f64)))
    }

    /// Inputs of every kink-bearing node (hinges and absolute values), in
    /// tape order. Finite-difference checking compares the sign patterns of
    /// two evaluations to detect coordinates that straddle a kink.
    pub fn kink_inputs(&self) -> Vec<F> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) | Op::Abs(a) => out.extend_from_slice(self.value(a).as_slice()),
                _ => {}
            }
        }
        out
    }

    /// Reverse pass from a scalar node. Returns one adjoint per node.
    pub fn backward(&self, loss: ValueId) -> Result<Grads<F>> {
        let loss_val = &self.nodes[loss.0].value;
        if !loss_val.is_scalar() {
            return Err(Error::Dimension(
                "backward target must be scalar".to_string(),
            ));
        }
        if !loss_val.is_finite() {
            return Err(Error::Numerical(
                "non-finite loss; refusing backward pass".to_string(),
            ));
        }

        let mut grads: Vec<Tensor<F>> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[loss.0] = Tensor::scalar(F::ONE);

        for i in (0..=loss.0).rev() {
            let g = grads[i].clone();
            if g.as_slice().iter().all(|&x| x == F::ZERO) {
                continue;
            }
            match self.nodes[i].op {
                Op::Input => {}
                Op::Row(src, idx) => {
                    let dst = grads[src.0].row_mut(idx);
                    for (d, &x) in dst.iter_mut().zip(g.as_slice()) {
                        *d += x;
                    }
                }
                Op::MatVec(m, v) => {
                    // dM += g v^T ; dv += M^T g
                    let vv = self.value(v).as_slice().to_vec();
                    {
                        let dm = &mut grads[m.0];
                        for r in 0..dm.rows() {
                            let gr = g.as_slice()[r];
                            if gr == F::ZERO {
                                continue;
                            }
                            for (d, &x) in dm.row_mut(r).iter_mut().zip(&vv) {
                                *d += gr * x;
                            }
                        }
                    }
                    let dv = numeric::matvec_transpose(self.value(m), &g)?;
                    numeric::axpy(&mut grads[v.0], F::ONE, &dv)?;
                }
                Op::Add(a, b) => {
                    numeric::axpy(&mut grads[a.0], F::ONE, &g)?;
                    numeric::axpy(&mut grads[b.0], F::ONE, &g)?;
                }
                Op::Sub(a, b) => {
                    numeric::axpy(&mut grads[a.0], F::ONE, &g)?;
                    numeric::axpy(&mut grads[b.0], -F::ONE, &g)?;
                }
                Op::Mul(a, b) => {
                    let da = numeric::hadamard(&g, self.value(b))?;
                    numeric::axpy(&mut grads[a.0], F::ONE, &da)?;
                    let db = numeric::hadamard(&g, self.value(a))?;
                    numeric::axpy(&mut grads[b.0], F::ONE, &db)?;
                }
                Op::Scale(a, c) => {
                    numeric::axpy(&mut grads[a.0], c, &g)?;
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let dst = &mut grads[a.0];
                    for ((d, &gi), &yi) in dst
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(y.as_slice())
                    {
                        *d += gi * yi * (F::ONE - yi);
                    }
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let dst = &mut grads[a.0];
                    for ((d, &gi), &yi) in dst
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(y.as_slice())
                    {
                        *d += gi * (F::ONE - yi * yi);
                    }
                }
                Op::Abs(a) => {
                    let x = self.value(a).clone();
                    let dst = &mut grads[a.0];
                    for ((d, &gi), &xi) in dst
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(x.as_slice())
                    {
                        if xi > F::ZERO {
                            *d += gi;
                        } else if xi < F::ZERO {
                            *d -= gi;
                        }
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(a).clone();
                    let dst = &mut grads[a.0];
                    for ((d, &gi), &xi) in dst
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(x.as_slice())
                    {
                        if xi > F::ZERO {
                            *d += gi;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let gs = g.item();
                    let bv = self.value(b).clone();
                    let av = self.value(a).clone();
                    numeric::axpy(&mut grads[a.0], gs, &bv)?;
                    numeric::axpy(&mut grads[b.0], gs, &av)?;
                }
                Op::SumSq(a) => {
                    let gs = g.item();
                    let two = F::from_f64(2.0);
                    let av = self.value(a).clone();
                    numeric::axpy(&mut grads[a.0], gs * two, &av)?;
                }
                Op::Rsqrt(a) => {
                    // y = x^(-1/2)  =>  dy/dx = -y^3 / 2
                    let y = &self.nodes[i].value;
                    let half = F::from_f64(0.5);
                    let dst = &mut grads[a.0];
                    for ((d, &gi), &yi) in dst
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(y.as_slice())
                    {
                        *d -= gi * half * yi * yi * yi;
                    }
                }
                Op::Softmax(a) => {
                    // dx = y ⊙ (g - <g, y>)
                    let y = &self.nodes[i].value;
                    let mut inner = F::ZERO;
                    for (&gi, &yi) in g.as_slice().iter().zip(y.as_slice()) {
                        inner += gi * yi;
                    }
                    let dst = &mut grads[a.0];
                    for ((d, &gi), &yi) in dst
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(y.as_slice())
                    {
                        *d += yi * (gi - inner);
                    }
                }
                Op::Concat(a, b) => {
                    let na = self.value(a).len();
                    {
                        let dst = &mut grads[a.0];
                        for (d, &gi) in dst.as_mut_slice().iter_mut().zip(&g.as_slice()[..na]) {
                            *d += gi;
                        }
                    }
                    let dst = &mut grads[b.0];
                    for (d, &gi) in dst.as_mut_slice().iter_mut().zip(&g.as_slice()[na..]) {
                        *d += gi;
                    }
                }
                Op::LogFloored(a, floor) => {
                    let x = self.value(a).clone();
                    let dst = &mut grads[a.0];
                    for ((d, &gi), &xi) in dst
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(x.as_slice())
                    {
                        *d += gi / (xi + floor);
                    }
                }
            }
        }
        Ok(Grads { by_node: grads })
    }
}

/// Named tensors spanning the word matrix, encoder weights, and similarity
/// head. Iteration order is the sorted name order, which makes flattening
/// and optimizer sweeps deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<F> {
    entries: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> Default for ParameterSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParameterSet<F> {
    pub fn new() -> Self {
        ParameterSet {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn tensor_count(&self) -> usize {
        self.entries.len()
    }

    /// Total scalar coordinate count.
    pub fn coord_count(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    pub fn convert<G: Real>(&self) -> ParameterSet<G> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.convert()))
                .collect(),
        }
    }

    /// Flatten all tensors into one coordinate vector (sorted name order,
    /// row-major within each tensor). Inverse of [`ParameterSet::unflatten`].
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.coord_count());
        for t in self.entries.values() {
            out.extend_from_slice(t.as_slice());
        }
        out
    }

    /// Rebuild from a coordinate vector, using `self` as the shape layout.
    pub fn unflatten(&self, flat: &[F]) -> Result<Self> {
        if flat.len() != self.coord_count() {
            return Err(Error::Dimension(format!(
                "flat length {} vs expected {}",
                flat.len(),
                self.coord_count()
            )));
        }
        let mut out = self.clone();
        let mut at = 0;
        for t in out.entries.values_mut() {
            let n = t.len();
            t.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(out)
    }

    /// Name and within-tensor index for a flat coordinate.
    pub fn locate(&self, coord: usize) -> Option<(&str, usize)> {
        let mut at = 0;
        for (name, t) in &self.entries {
            if coord < at + t.len() {
                return Some((name, coord - at));
            }
            at += t.len();
        }
        None
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|t| t.is_finite())
    }

    pub fn bits_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((an, at), (bn, bt))| an == bn && at.bits_eq(bt))
    }

    /// Fill every entry with a uniform draw from `[-scale, scale]`.
    /// Used to build fully random instances for gradient checking.
    pub fn randomize(&mut self, rng: &mut crate::numeric::RandomSource, scale: f64) {
        for t in self.entries.values_mut() {
            for x in t.as_mut_slice() {
                *x = F::from_f64(rng.uniform(-scale, scale));
            }
        }
    }

    /// Squared Euclidean distance between two sets sharing a layout.
    pub fn distance_sq(&self, other: &Self) -> Result<F> {
        let mut acc = F::ZERO;
        for (name, t) in &self.entries {
            let o = other.get(name)?;
            let d = numeric::sub(t, o)?;
            acc += numeric::sum_sq(&d);
        }
        Ok(acc)
    }
}

/// Parameter tensors bound into a graph as input nodes.
pub struct ParamNodes {
    ids: BTreeMap<String, ValueId>,
}

impl ParamNodes {
    pub fn get(&self, name: &str) -> Result<ValueId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ValueId)> {
        self.ids.iter()
    }

    /// Gather per-parameter gradients out of a finished backward pass.
    pub fn gradients<F: Real>(&self, grads: &Grads<F>) -> ParameterSet<F> {
        let mut out = ParameterSet::new();
        for (name, &id) in &self.ids {
            out.insert(name.clone(), grads.get(id).clone());
        }
        out
    }
}

impl<F: Real> Graph<F> {
    /// Bind every tensor of a parameter set as an input node.
    pub fn bind(&mut self, params: &ParameterSet<F>) -> ParamNodes {
        let mut ids = BTreeMap::new();
        for (name, t) in params.iter() {
            ids.insert(name.clone(), self.constant(t.clone()));
        }
        ParamNodes { ids }
    }
}

/// Evaluate a loss builder and return its value along with exact
/// reverse-mode gradients for every bound parameter.
pub fn grad<F: Real>(
    params: &ParameterSet<F>,
    build: impl FnOnce(&mut Graph<F>, &ParamNodes) -> Result<ValueId>,
) -> Result<(F, ParameterSet<F>)> {
    let mut g = Graph::new();
    let nodes = g.bind(params);
    let loss = build(&mut g, &nodes)?;
    let value = g.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss value {value}")));
    }
    let grads = g.backward(loss)?;
    Ok((value, nodes.gradients(&grads)))
}

/// Evaluate a loss builder forward-only. Returns the loss value and the
/// kink signature used by finite-difference checking.
pub fn eval_loss<F: Real>(
    params: &ParameterSet<F>,
    build: impl FnOnce(&mut Graph<F>, &ParamNodes) -> Result<ValueId>,
) -> Result<(F, Vec<F>)> {
    let mut g = Graph::new();
    let nodes = g.bind(params);
    let loss = build(&mut g, &nodes)?;
    Ok((g.scalar_value(loss), g.kink_inputs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // loss = ||v||^2 at v = [1, 2]  =>  grad [2, 4]
        let mut params = ParameterSet::new();
        params.insert("v", Tensor::vector(vec![1.0f64, 2.0]));
        let (value, grads) = grad(&params, |g, p| {
            let v = p.get("v")?;
            Ok(g.sum_sq(v))
        })
        .unwrap();
        assert_eq!(value, 5.0);
        assert_eq!(grads.get("v").unwrap().as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn cosine_gradient_orthogonal_to_input() {
        // cosine is scale invariant in u, so u . dL/du = 0
        let mut params = ParameterSet::new();
        params.insert("u", Tensor::vector(vec![0.3f64, -1.2, 0.7]));
        let k = Tensor::vector(vec![1.0f64, 2.0, -0.5]);
        let (_, grads) = grad(&params, |g, p| {
            let u = p.get("u")?;
            let kc = g.constant(k.clone());
            g.cosine(u, kc)
        })
        .unwrap();
        let u = Tensor::vector(vec![0.3f64, -1.2, 0.7]);
        let inner = numeric::dot(&u, grads.get("u").unwrap()).unwrap();
        assert!(inner.abs() < 1e-14, "u . grad = {inner}");
    }

    #[test]
    fn matvec_gradients() {
        // loss = sum((M v)_i) via dot with ones
        let mut params = ParameterSet::new();
        params.insert(
            "m",
            Tensor::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap(),
        );
        params.insert("v", Tensor::vector(vec![5.0f64, 6.0]));
        let (value, grads) = grad(&params, |g, p| {
            let m = p.get("m")?;
            let v = p.get("v")?;
            let mv = g.matvec(m, v)?;
            let ones = g.constant(Tensor::vector(vec![1.0f64, 1.0]));
            g.dot(mv, ones)
        })
        .unwrap();
        assert_eq!(value, 17.0 + 39.0);
        // d/dM = ones v^T, d/dv = M^T ones
        assert_eq!(grads.get("m").unwrap().as_slice(), &[5.0, 6.0, 5.0, 6.0]);
        assert_eq!(grads.get("v").unwrap().as_slice(), &[4.0, 6.0]);
    }

    #[test]
    fn non_finite_loss_refused() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::scalar(0.0f64));
        let err = grad(&params, |g, p| {
            let x = p.get("x")?;
            // ln(0 + 0) = -inf
            Ok(g.log_floored(x, 0.0))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn relu_subgradient_zero_at_kink() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::scalar(0.0f64));
        let (value, grads) = grad(&params, |g, p| {
            let x = p.get("x")?;
            Ok(g.relu(x))
        })
        .unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grads.get("x").unwrap().item(), 0.0);
    }

    #[test]
    fn grad_is_deterministic() {
        let mut params = ParameterSet::new();
        params.insert("v", Tensor::vector(vec![0.12f64, -0.9, 3.4, 0.01]));
        let build = |g: &mut Graph<f64>, p: &ParamNodes| {
            let v = p.get("v")?;
            let s = g.sigmoid(v);
            let t = g.tanh(s);
            let sm = g.softmax(t);
            let lg = g.log_floored(sm, 1e-12);
            let w = g.constant(Tensor::vector(vec![0.25f64; 4]));
            g.dot(lg, w)
        };
        let (va, ga) = grad(&params, build).unwrap();
        let (vb, gb) = grad(&params, build).unwrap();
        assert_eq!(va.to_bits(), vb.to_bits());
        assert!(ga.bits_eq(&gb));
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let mut params = ParameterSet::new();
        params.insert("b", Tensor::vector(vec![1.0f64, 2.0]));
        params.insert(
            "a",
            Tensor::from_vec(2, 2, vec![3.0f64, 4.0, 5.0, 6.0]).unwrap(),
        );
        let flat = params.flatten();
        // sorted order: a first
        assert_eq!(flat, vec![3.0, 4.0, 5.0, 6.0, 1.0, 2.0]);
        let back = params.unflatten(&flat).unwrap();
        assert!(back.bits_eq(&params));
        assert_eq!(params.locate(4), Some(("b", 0)));
    }
}
