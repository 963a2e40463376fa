use std::collections::HashMap;
use std::fmt;

use rand::Rng;

use super::{matmul_raw, softmax_into, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            // written so NaN passes through; f64::max would drop it
            Activation::Relu => {
                if x <= 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" | "none" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// An operation whose forward pass is computed outside the tape and whose
/// vector-Jacobian product is supplied by the implementor.
pub trait CustomOp: fmt::Debug {
    fn name(&self) -> &'static str;

    /// Gradient with respect to each input, given the upstream gradient of
    /// the output. Returned tensors must match the input shapes.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    BroadcastRows(Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Act(Var, Activation),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Custom(Box<dyn CustomOp>, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order: an
/// operation can only reference nodes that already exist.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    probes: Vec<(&'static str, Var)>,
}

impl Graph<'static> {
    /// A graph with no parameter store; only constants can be leaves.
    pub fn detached() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            probes: Vec::new(),
        }
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            probes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Records a named intermediate for later inspection.
    pub fn probe(&mut self, label: &'static str, v: Var) {
        self.probes.push((label, v));
    }

    pub fn probes(&self, label: &str) -> Vec<Var> {
        self.probes
            .iter()
            .filter(|(l, _)| *l == label)
            .map(|&(_, v)| v)
            .collect()
    }

    pub fn all_probes(&self) -> &[(&'static str, Var)] {
        &self.probes
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.as_matrix(), Op::Leaf)
    }

    /// Leaf holding the current value of a stored parameter. Repeated calls
    /// return the same node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let v = self.push(store.get(id).as_matrix(), Op::Param);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = transpose(self.value(a));
        self.push(t, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Tensor::matrix(r, c, data).expect("shape checked"), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(Error::shape("add_row", format!("[{m}x{n}] + {:?}", self.dims(row))));
        }
        let r = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, row)))
    }

    /// Repeats a `1 x n` row `m` times.
    pub fn broadcast_rows(&mut self, row: Var, m: usize) -> Result<Var> {
        let (r, n) = self.dims(row);
        if r != 1 {
            return Err(Error::shape("broadcast_rows", format!("expected one row, got {r}")));
        }
        let src = self.value(row).data().to_vec();
        let mut data = Vec::with_capacity(m * n);
        for _ in 0..m {
            data.extend_from_slice(&src);
        }
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::BroadcastRows(row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| 1.0 - x);
        self.push(t, Op::Scale(a, -1.0))
    }

    /// Multiplies every entry of `a` by the single entry of `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.dims(s) != (1, 1) {
            return Err(Error::shape("mul_scalar", format!("scalar is {:?}", self.dims(s))));
        }
        let sv = self.scalar(s);
        let t = self.value(a).map(|x| x * sv);
        Ok(self.push(t, Op::MulScalar(a, s)))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let t = self.value(a).map(|x| act.apply(x));
        self.push(t, Op::Act(a, act))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// Row-wise softmax. Every row must be nonempty.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if n == 0 {
            return Err(Error::EmptyDistribution);
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for (i, out) in data.chunks_mut(n).enumerate() {
            softmax_into(&src[i * n..(i + 1) * n], out);
        }
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::SoftmaxRows(a)))
    }

    /// Row-wise layer normalization followed by a per-column affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.dims(gamma) != (1, n) || self.dims(beta) != (1, n) {
            return Err(Error::shape(
                "layer_norm",
                format!("width {n}, gamma {:?}, beta {:?}", self.dims(gamma), self.dims(beta)),
            ));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.dims(p).1)
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(Error::shape("concat_rows", format!("width {c} vs {n}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::matrix(rows, n, data)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|&p| self.dims(p).0)
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let mut width = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(Error::shape("concat_cols", format!("rows {r} vs {m}")));
            }
            width += c;
        }
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(Tensor::matrix(m, width, data)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > m {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {m}")));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::matrix(len, n, data)?, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {n}")));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols(a, start)))
    }

    /// Embedding lookup: output row `k` is row `idx[k]` of `table`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(table);
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::shape("gather_rows", format!("index {i} >= {m}")));
            }
            data.extend_from_slice(self.value(table).row(i));
        }
        Ok(self.push(Tensor::matrix(idx.len(), n, data)?, Op::GatherRows(table, idx.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Tensor::full(&[1, 1], s), Op::Sum(a))
    }

    /// Inverted dropout. Identity when `rate` is zero or no generator is given.
    pub fn dropout<R: Rng>(&mut self, a: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
        let Some(rng) = rng else { return Ok(a) };
        if rate <= 0.0 {
            return Ok(a);
        }
        let (m, n) = self.dims(a);
        let keep = 1.0 - rate;
        let mask = (0..m * n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = self.constant(Tensor::matrix(m, n, mask)?);
        self.mul(a, mask)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], output: Tensor) -> Var {
        self.push(output.as_matrix(), Op::Custom(op, inputs.to_vec()))
    }

    /// Reverse sweep from a `1 x 1` root. Each node is visited once, in
    /// reverse creation order.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.dims(root) != (1, 1) {
            return Err(Error::shape("backward", format!("root is {:?}", self.dims(root))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(&[1, 1], 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self
            .param_vars
            .iter()
            .filter_map(|(&id, &v)| grads[v.0].clone().map(|g| (id, g)))
            .collect();
        Ok(Gradients {
            per_node: grads,
            params,
        })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims();
                let n = val(*b).cols();
                let bt = transpose(val(*b));
                let at = transpose(val(*a));
                let da = matmul_raw(g.data(), bt.data(), m, n, k);
                let db = matmul_raw(at.data(), g.data(), k, m, n);
                accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
            }
            Op::Transpose(a) => accumulate(grads, *a, transpose(g)),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, hadamard(g, val(*b)));
                accumulate(grads, *b, hadamard(g, val(*a)));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, column_sums(g));
            }
            Op::BroadcastRows(row) => accumulate(grads, *row, column_sums(g)),
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::MulScalar(a, s) => {
                let sv = val(*s).data()[0];
                accumulate(grads, *a, g.map(|x| x * sv));
                let ds: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                accumulate(grads, *s, Tensor::full(&[1, 1], ds));
            }
            Op::Act(a, act) => {
                let x = val(*a).data();
                let y = node.value.data();
                let data = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gi, (&xi, &yi))| gi * act.derivative(xi, yi))
                    .collect();
                let (m, n) = g.dims();
                accumulate(grads, *a, Tensor::matrix(m, n, data).unwrap());
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = g.dims();
                let y = node.value.data();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g.data()[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::matrix(m, n, dx).unwrap());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = g.dims();
                let gam = val(*gamma).data();
                let gd = g.data();
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                let mut dx = vec![0.0; m * n];
                let nf = n as f64;
                for i in 0..m {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..n {
                        let k = i * n + j;
                        dgamma[j] += gd[k] * xhat[k];
                        dbeta[j] += gd[k];
                        let dh = gd[k] * gam[j];
                        sum_dh += dh;
                        sum_dh_h += dh * xhat[k];
                    }
                    for j in 0..n {
                        let k = i * n + j;
                        let dh = gd[k] * gam[j];
                        dx[k] = inv_std[i] / nf * (nf * dh - sum_dh - xhat[k] * sum_dh_h);
                    }
                }
                accumulate(grads, *x, Tensor::matrix(m, n, dx).unwrap());
                accumulate(grads, *gamma, Tensor::matrix(1, n, dgamma).unwrap());
                accumulate(grads, *beta, Tensor::matrix(1, n, dbeta).unwrap());
            }
            Op::ConcatRows(parts) => {
                let n = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = val(p).rows();
                    let data = g.data()[offset * n..(offset + r) * n].to_vec();
                    accumulate(grads, p, Tensor::matrix(r, n, data).unwrap());
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).cols();
                    let mut data = Vec::with_capacity(m * c);
                    for i in 0..m {
                        data.extend_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    accumulate(grads, p, Tensor::matrix(m, c, data).unwrap());
                    offset += c;
                }
            }
            Op::SliceRows(a, start) => {
                let (m, n) = val(*a).dims();
                let mut d = Tensor::zeros(&[m, n]);
                let len = g.rows();
                d.data_mut()[start * n..(start + len) * n].copy_from_slice(g.data());
                accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let (m, n) = val(*a).dims();
                let mut d = Tensor::zeros(&[m, n]);
                let len = g.cols();
                for i in 0..m {
                    d.data_mut()[i * n + start..i * n + start + len].copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, d);
            }
            Op::GatherRows(table, idx) => {
                let (m, n) = val(*table).dims();
                let mut d = Tensor::zeros(&[m, n]);
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        d.data_mut()[i * n + j] += g.get(k, j);
                    }
                }
                accumulate(grads, *table, d);
            }
            Op::Sum(a) => {
                let (m, n) = val(*a).dims();
                accumulate(grads, *a, Tensor::full(&[m, n], g.data()[0]));
            }
            Op::Custom(op, inputs) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let dins = op.backward(&ins, &node.value, g);
                debug_assert_eq!(dins.len(), inputs.len(), "{} returned wrong arity", op.name());
                for (&v, d) in inputs.iter().zip(dins) {
                    accumulate(grads, v, d.as_matrix());
                }
            }
        }
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; `None` when `v` does not
    /// influence the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.per_node.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        let mut sorted: Vec<&(ParamId, Tensor)> = self.params.iter().collect();
        sorted.sort_by_key(|(id, _)| *id);
        for (id, g) in sorted {
            let p = store.iter_mut().nth(id.index()).expect("param id in range");
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let (m, n) = t.dims();
    let src = t.data();
    let mut data = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            data[j * m + i] = src[i * n + j];
        }
    }
    Tensor::matrix(n, m, data).expect("transpose shape")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = a.dims();
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::matrix(m, n, data).expect("hadamard shape")
}

fn column_sums(g: &Tensor) -> Tensor {
    let (m, n) = g.dims();
    let mut out = vec![0.0; n];
    for i in 0..m {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::matrix(1, n, out).expect("column sums shape")
}
